use std::rc::Rc;

use super::{shape_err, Real, Result, Tensor, Var};

fn zeros<T: Real>(n: usize) -> Vec<T> {
    vec![T::zero(); n]
}

/// Splits `[N, C, rest..]` into `(N, C, prod(rest))`.
fn nc_rest(shape: &[usize]) -> Option<(usize, usize, usize)> {
    if shape.len() < 2 {
        return None;
    }
    Some((shape[0], shape[1], shape[2..].iter().product()))
}

fn same_shape<T: Real>(op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
    }
    Ok(())
}

fn unary<'t, T: Real>(
    name: &str,
    x: Var<'t, T>,
    f: impl Fn(T) -> T,
    df_from_out: impl Fn(T) -> T + 'static,
) -> Var<'t, T> {
    let xv = x.value();
    let out: Vec<T> = xv.data().iter().map(|&v| f(v)).collect();
    let out = Tensor::new(xv.shape(), out).expect("same shape");
    let saved = Rc::new(out.clone());
    x.tape().push_op(
        name,
        out,
        &[x],
        Box::new(move |g, _| {
            vec![Some(
                g.iter()
                    .zip(saved.data())
                    .map(|(&g, &y)| g * df_from_out(y))
                    .collect(),
            )]
        }),
    )
}

pub fn relu<T: Real>(x: Var<'_, T>) -> Var<'_, T> {
    unary(
        "relu",
        x,
        |v| if v > T::zero() { v } else { T::zero() },
        |y| if y > T::zero() { T::one() } else { T::zero() },
    )
}

pub fn tanh<T: Real>(x: Var<'_, T>) -> Var<'_, T> {
    unary("tanh", x, |v| v.tanh(), |y| T::one() - y * y)
}

pub fn sigmoid<T: Real>(x: Var<'_, T>) -> Var<'_, T> {
    unary(
        "sigmoid",
        x,
        |v| T::one() / (T::one() + (-v).exp()),
        |y| y * (T::one() - y),
    )
}

pub fn scale<T: Real>(x: Var<'_, T>, c: T) -> Var<'_, T> {
    let xv = x.value();
    let out = Tensor::new(xv.shape(), xv.data().iter().map(|&v| v * c).collect())
        .expect("same shape");
    x.tape().push_op(
        "scale",
        out,
        &[x],
        Box::new(move |g, _| vec![Some(g.iter().map(|&g| g * c).collect())]),
    )
}

pub fn add<'t, T: Real>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape("add", &a, &b)?;
    let (av, bv) = (a.value(), b.value());
    let out = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
    let out = Tensor::new(av.shape(), out)?;
    Ok(a.tape().push_op(
        "add",
        out,
        &[a, b],
        Box::new(|g, needs| {
            vec![
                needs[0].then(|| g.to_vec()),
                needs[1].then(|| g.to_vec()),
            ]
        }),
    ))
}

pub fn mul<'t, T: Real>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape("mul", &a, &b)?;
    let (av, bv) = (a.value(), b.value());
    let out = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
    let out = Tensor::new(av.shape(), out)?;
    Ok(a.tape().push_op(
        "mul",
        out,
        &[a, b],
        Box::new(move |g, needs| {
            let da = needs[0].then(|| g.iter().zip(bv.data()).map(|(&g, &y)| g * y).collect());
            let db = needs[1].then(|| g.iter().zip(av.data()).map(|(&g, &x)| g * x).collect());
            vec![da, db]
        }),
    ))
}

pub fn sum_all<T: Real>(x: Var<'_, T>) -> Var<'_, T> {
    let xv = x.value();
    let n = xv.numel();
    let total = xv.data().iter().fold(T::zero(), |acc, &v| acc + v);
    x.tape().push_op(
        "sum",
        Tensor::scalar(total),
        &[x],
        Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
    )
}

pub fn mean_all<T: Real>(x: Var<'_, T>) -> Var<'_, T> {
    let n = x.value().numel();
    scale(sum_all(x), T::one() / T::cst(n as f64))
}

pub fn reshape<'t, T: Real>(x: Var<'t, T>, shape: &[usize]) -> Result<Var<'t, T>> {
    let out = x.value().reshaped(shape)?;
    Ok(x.tape().push_op(
        "reshape",
        out,
        &[x],
        Box::new(|g, _| vec![Some(g.to_vec())]),
    ))
}

/// Row-wise softmax of a `[N, M]` tensor.
pub fn softmax_rows<T: Real>(x: Var<'_, T>) -> Result<Var<'_, T>> {
    let xv = x.value();
    let [n, m] = xv.shape() else {
        return Err(shape_err("softmax", format!("expected [N, M], got {:?}", xv.shape())));
    };
    let (n, m) = (*n, *m);
    let mut out = zeros::<T>(n * m);
    for (row, dst) in xv.data().chunks(m).zip(out.chunks_mut(m)) {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut z = T::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            z += *d;
        }
        dst.iter_mut().for_each(|d| *d = *d / z);
    }
    let saved = Rc::new(out.clone());
    let out = Tensor::new(&[n, m], out)?;
    Ok(x.tape().push_op(
        "softmax",
        out,
        &[x],
        Box::new(move |g, _| {
            let mut dx = zeros::<T>(n * m);
            for ((gr, yr), dr) in g.chunks(m).zip(saved.chunks(m)).zip(dx.chunks_mut(m)) {
                let dot = gr.iter().zip(yr).fold(T::zero(), |a, (&g, &y)| a + g * y);
                for ((d, &g), &y) in dr.iter_mut().zip(gr).zip(yr) {
                    *d = y * (g - dot);
                }
            }
            vec![Some(dx)]
        }),
    ))
}

/// Fully connected layer: `out[n, m] = sum_d weight[m, d] * input[n, d] + bias[m]`.
pub fn dense<'t, T: Real>(
    input: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let (xv, wv, bv) = (input.value(), weight.value(), bias.value());
    let (&[n, d], &[m, dw], &[mb]) = (xv.shape(), wv.shape(), bv.shape()) else {
        return Err(shape_err(
            "dense",
            format!(
                "expected [N,D], [M,D], [M]; got {:?}, {:?}, {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            ),
        ));
    };
    if d != dw || m != mb {
        return Err(shape_err(
            "dense",
            format!("input dim {d}, weight [{m}, {dw}], bias [{mb}]"),
        ));
    }
    let mut out = zeros::<T>(n * m);
    for row in out.chunks_mut(m) {
        row.copy_from_slice(bv.data());
    }
    let d_i = d as isize;
    let m_i = m as isize;
    T::gemm(
        n,
        d,
        m,
        T::one(),
        xv.data(),
        d_i,
        1,
        wv.data(),
        1,
        d_i,
        T::one(),
        &mut out,
        m_i,
        1,
    );
    let out = Tensor::new(&[n, m], out)?;
    Ok(input.tape().push_op(
        "dense",
        out,
        &[input, weight, bias],
        Box::new(move |g, needs| {
            let dx = needs[0].then(|| {
                let mut dx = zeros::<T>(n * d);
                T::gemm(n, m, d, T::one(), g, m_i, 1, wv.data(), d_i, 1, T::zero(), &mut dx, d_i, 1);
                dx
            });
            let dw = needs[1].then(|| {
                let mut dw = zeros::<T>(m * d);
                T::gemm(m, n, d, T::one(), g, 1, m_i, xv.data(), d_i, 1, T::zero(), &mut dw, d_i, 1);
                dw
            });
            let db = needs[2].then(|| {
                let mut db = zeros::<T>(m);
                for row in g.chunks(m) {
                    db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                }
                db
            });
            vec![dx, dw, db]
        }),
    ))
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn ohw(&self) -> usize {
        self.oh * self.ow
    }

    /// Calls `f(col_row, out_pos, in_offset)` for every in-bounds tap of one sample.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let r = (c * self.kh + ki) * self.kw + kj;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let in_off = (c * self.h + iy as usize) * self.w + ix as usize;
                            f(r, oy * self.ow + ox, in_off);
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution with zero padding over `[N, C, H, W]` inputs.
pub fn conv2d<'t, T: Real>(
    input: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Option<Var<'t, T>>,
    stride: usize,
    pad: usize,
) -> Result<Var<'t, T>> {
    let (xv, wv) = (input.value(), weight.value());
    let (&[n, c, h, w], &[k, cw, kh, kw]) = (xv.shape(), wv.shape()) else {
        return Err(shape_err(
            "conv2d",
            format!("expected 4-D input and weight, got {:?} and {:?}", xv.shape(), wv.shape()),
        ));
    };
    if c != cw {
        return Err(shape_err("conv2d", format!("input has {c} channels, weight expects {cw}")));
    }
    if stride == 0 || kh > h + 2 * pad || kw > w + 2 * pad {
        return Err(shape_err(
            "conv2d",
            format!("kernel {kh}x{kw} stride {stride} does not fit {h}x{w} with pad {pad}"),
        ));
    }
    let bv = match bias {
        Some(b) => {
            let bv = b.value();
            if bv.shape() != [k] {
                return Err(shape_err("conv2d", format!("bias {:?} for {k} filters", bv.shape())));
            }
            Some(bv)
        }
        None => None,
    };
    let geom = Rc::new(ConvGeom {
        c,
        h,
        w,
        kh,
        kw,
        oh: (h + 2 * pad - kh) / stride + 1,
        ow: (w + 2 * pad - kw) / stride + 1,
        stride,
        pad,
    });
    let (ckk, ohw) = (geom.ckk(), geom.ohw());
    let chw = c * h * w;
    let mut cols = zeros::<T>(n * ckk * ohw);
    for (sample, col) in xv.data().chunks(chw).zip(cols.chunks_mut(ckk * ohw)) {
        geom.for_each_tap(|r, pos, off| col[r * ohw + pos] = sample[off]);
    }
    let mut out = zeros::<T>(n * k * ohw);
    for (col, dst) in cols.chunks(ckk * ohw).zip(out.chunks_mut(k * ohw)) {
        if let Some(bv) = &bv {
            for (row, &b) in dst.chunks_mut(ohw).zip(bv.data()) {
                row.iter_mut().for_each(|v| *v = b);
            }
        }
        let beta = if bv.is_some() { T::one() } else { T::zero() };
        T::gemm(
            k,
            ckk,
            ohw,
            T::one(),
            wv.data(),
            ckk as isize,
            1,
            col,
            ohw as isize,
            1,
            beta,
            dst,
            ohw as isize,
            1,
        );
    }
    let out = Tensor::new(&[n, k, geom.oh, geom.ow], out)?;
    let cols = Rc::new(cols);
    let mut parents = vec![input, weight];
    parents.extend(bias);
    Ok(input.tape().push_op(
        "conv2d",
        out,
        &parents,
        Box::new(move |g, needs| {
            let g_stride = k * ohw;
            let dx = needs[0].then(|| {
                let mut dx = zeros::<T>(n * chw);
                let mut dcol = zeros::<T>(ckk * ohw);
                for ((gs, dxs), _) in g.chunks(g_stride).zip(dx.chunks_mut(chw)).zip(0..n) {
                    T::gemm(
                        ckk,
                        k,
                        ohw,
                        T::one(),
                        wv.data(),
                        1,
                        ckk as isize,
                        gs,
                        ohw as isize,
                        1,
                        T::zero(),
                        &mut dcol,
                        ohw as isize,
                        1,
                    );
                    geom.for_each_tap(|r, pos, off| dxs[off] += dcol[r * ohw + pos]);
                }
                dx
            });
            let dw = needs[1].then(|| {
                let mut dw = zeros::<T>(k * ckk);
                for (gs, col) in g.chunks(g_stride).zip(cols.chunks(ckk * ohw)) {
                    T::gemm(
                        k,
                        ohw,
                        ckk,
                        T::one(),
                        gs,
                        ohw as isize,
                        1,
                        col,
                        1,
                        ohw as isize,
                        T::one(),
                        &mut dw,
                        ckk as isize,
                        1,
                    );
                }
                dw
            });
            let mut grads = vec![dx, dw];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| {
                    let mut db = zeros::<T>(k);
                    for gs in g.chunks(g_stride) {
                        for (d, row) in db.iter_mut().zip(gs.chunks(ohw)) {
                            *d += row.iter().fold(T::zero(), |a, &b| a + b);
                        }
                    }
                    db
                }));
            }
            grads
        }),
    ))
}

/// Mean over every axis after the channel axis: `[N, C, ..] -> [N, C]`.
pub fn global_avg_pool<T: Real>(x: Var<'_, T>) -> Result<Var<'_, T>> {
    let xv = x.value();
    let shape = xv.shape();
    if shape.len() < 3 {
        return Err(shape_err("global_avg_pool", format!("expected [N, C, ..], got {shape:?}")));
    }
    let (n, c, s) = nc_rest(shape).expect("rank checked");
    let inv = T::one() / T::cst(s as f64);
    let out = xv
        .data()
        .chunks(s)
        .map(|plane| plane.iter().fold(T::zero(), |a, &b| a + b) * inv)
        .collect();
    let out = Tensor::new(&[n, c], out)?;
    Ok(x.tape().push_op(
        "global_avg_pool",
        out,
        &[x],
        Box::new(move |g, _| {
            let mut dx = Vec::with_capacity(n * c * s);
            for &gv in g {
                dx.extend(std::iter::repeat_n(gv * inv, s));
            }
            vec![Some(dx)]
        }),
    ))
}

/// Concatenates `[N, C_i, rest..]` tensors along the channel axis.
pub fn concat_channels<'t, T: Real>(xs: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let first = xs
        .first()
        .ok_or_else(|| shape_err("concat", "no inputs"))?;
    let base = first.shape();
    let (n, _, s) = nc_rest(&base).ok_or_else(|| shape_err("concat", "rank < 2"))?;
    let mut widths = Vec::with_capacity(xs.len());
    for x in xs {
        let sh = x.shape();
        if sh.len() != base.len() || sh[0] != n || sh[2..] != base[2..] {
            return Err(shape_err("concat", format!("{sh:?} vs {base:?}")));
        }
        widths.push(sh[1] * s);
    }
    let total: usize = widths.iter().sum();
    let values: Vec<_> = xs.iter().map(|x| x.value()).collect();
    let mut out = Vec::with_capacity(n * total);
    for i in 0..n {
        for (v, &wd) in values.iter().zip(&widths) {
            out.extend_from_slice(&v.data()[i * wd..(i + 1) * wd]);
        }
    }
    let mut shape = base.clone();
    shape[1] = total / s;
    let out = Tensor::new(&shape, out)?;
    Ok(first.tape().push_op(
        "concat",
        out,
        xs,
        Box::new(move |g, needs| {
            let mut offsets = Vec::with_capacity(widths.len());
            let mut acc = 0;
            for &wd in &widths {
                offsets.push(acc);
                acc += wd;
            }
            widths
                .iter()
                .zip(&offsets)
                .zip(needs)
                .map(|((&wd, &off), &need)| {
                    need.then(|| {
                        let mut d = Vec::with_capacity(n * wd);
                        for row in g.chunks(total) {
                            d.extend_from_slice(&row[off..off + wd]);
                        }
                        d
                    })
                })
                .collect()
        }),
    ))
}

/// Channels `[start, start + len)` of a `[N, C, rest..]` tensor.
pub fn narrow_channels<T: Real>(x: Var<'_, T>, start: usize, len: usize) -> Result<Var<'_, T>> {
    let xv = x.value();
    let (n, c, s) = nc_rest(xv.shape()).ok_or_else(|| shape_err("narrow", "rank < 2"))?;
    if len == 0 || start + len > c {
        return Err(shape_err("narrow", format!("channels {start}..{} of {c}", start + len)));
    }
    let mut out = Vec::with_capacity(n * len * s);
    for row in xv.data().chunks(c * s) {
        out.extend_from_slice(&row[start * s..(start + len) * s]);
    }
    let mut shape = xv.shape().to_vec();
    shape[1] = len;
    let out = Tensor::new(&shape, out)?;
    Ok(x.tape().push_op(
        "narrow",
        out,
        &[x],
        Box::new(move |g, _| {
            let mut dx = zeros::<T>(n * c * s);
            for (dst, src) in dx.chunks_mut(c * s).zip(g.chunks(len * s)) {
                dst[start * s..(start + len) * s].copy_from_slice(src);
            }
            vec![Some(dx)]
        }),
    ))
}

/// Rows `rows` of the leading axis, in the given order.
pub fn select_rows<'t, T: Real>(x: Var<'t, T>, rows: &[usize]) -> Result<Var<'t, T>> {
    let xv = x.value();
    let Some((&n, rest)) = xv.shape().split_first() else {
        return Err(shape_err("select_rows", "rank 0"));
    };
    if rows.is_empty() || rows.iter().any(|&r| r >= n) {
        return Err(shape_err("select_rows", format!("rows {rows:?} of {n}")));
    }
    let s: usize = rest.iter().product();
    let mut out = Vec::with_capacity(rows.len() * s);
    for &r in rows {
        out.extend_from_slice(&xv.data()[r * s..(r + 1) * s]);
    }
    let mut shape = xv.shape().to_vec();
    shape[0] = rows.len();
    let out = Tensor::new(&shape, out)?;
    let rows = rows.to_vec();
    Ok(x.tape().push_op(
        "select_rows",
        out,
        &[x],
        Box::new(move |g, _| {
            let mut dx = zeros::<T>(n * s);
            for (&r, src) in rows.iter().zip(g.chunks(s)) {
                dx[r * s..(r + 1) * s].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
            }
            vec![Some(dx)]
        }),
    ))
}

/// Broadcast product of `[N, C, rest..]` with per-sample channel gates `[N, C]`.
pub fn mul_channels<'t, T: Real>(x: Var<'t, T>, gates: Var<'t, T>) -> Result<Var<'t, T>> {
    let (xv, gv) = (x.value(), gates.value());
    let (n, c, s) = nc_rest(xv.shape()).ok_or_else(|| shape_err("mul_channels", "rank < 2"))?;
    if gv.shape() != [n, c] {
        return Err(shape_err(
            "mul_channels",
            format!("gates {:?} for input {:?}", gv.shape(), xv.shape()),
        ));
    }
    let mut out = Vec::with_capacity(n * c * s);
    for (plane, &gate) in xv.data().chunks(s).zip(gv.data()) {
        out.extend(plane.iter().map(|&v| v * gate));
    }
    let out = Tensor::new(xv.shape(), out)?;
    Ok(x.tape().push_op(
        "mul_channels",
        out,
        &[x, gates],
        Box::new(move |g, needs| {
            let dx = needs[0].then(|| {
                let mut dx = Vec::with_capacity(n * c * s);
                for (gp, &gate) in g.chunks(s).zip(gv.data()) {
                    dx.extend(gp.iter().map(|&v| v * gate));
                }
                dx
            });
            let dg = needs[1].then(|| {
                g.chunks(s)
                    .zip(xv.data().chunks(s))
                    .map(|(gp, xp)| gp.iter().zip(xp).fold(T::zero(), |a, (&g, &x)| a + g * x))
                    .collect()
            });
            vec![dx, dg]
        }),
    ))
}

/// Per-channel batch statistics from a training-mode normalization.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance estimate (used for running averages).
    pub var_unbiased: Vec<T>,
}

/// Training-mode normalization using batch statistics, followed by a
/// learnable per-channel affine map.
pub fn batch_norm_train<'t, T: Real>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    eps: T,
) -> Result<(Var<'t, T>, BatchStats<T>)> {
    let (xv, gv, bv) = (x.value(), gamma.value(), beta.value());
    let (n, c, s) = nc_rest(xv.shape()).ok_or_else(|| shape_err("batch_norm", "rank < 2"))?;
    if gv.shape() != [c] || bv.shape() != [c] {
        return Err(shape_err(
            "batch_norm",
            format!("affine {:?}/{:?} for {c} channels", gv.shape(), bv.shape()),
        ));
    }
    let m = n * s;
    let mf = T::cst(m as f64);
    let data = xv.data();
    let mut mean = zeros::<T>(c);
    let mut var = zeros::<T>(c);
    for i in 0..n {
        for ch in 0..c {
            let plane = &data[(i * c + ch) * s..(i * c + ch + 1) * s];
            mean[ch] += plane.iter().fold(T::zero(), |a, &b| a + b);
        }
    }
    mean.iter_mut().for_each(|v| *v = *v / mf);
    for i in 0..n {
        for ch in 0..c {
            let plane = &data[(i * c + ch) * s..(i * c + ch + 1) * s];
            let mu = mean[ch];
            var[ch] += plane.iter().fold(T::zero(), |a, &b| a + (b - mu) * (b - mu));
        }
    }
    var.iter_mut().for_each(|v| *v = *v / mf);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = zeros::<T>(data.len());
    let mut out = zeros::<T>(data.len());
    for i in 0..n {
        for ch in 0..c {
            let range = (i * c + ch) * s..(i * c + ch + 1) * s;
            for ((xh, o), &v) in xhat[range.clone()]
                .iter_mut()
                .zip(&mut out[range.clone()])
                .zip(&data[range])
            {
                *xh = (v - mean[ch]) * inv_std[ch];
                *o = *xh * gv.data()[ch] + bv.data()[ch];
            }
        }
    }
    let correction = if m > 1 {
        mf / T::cst((m - 1) as f64)
    } else {
        T::one()
    };
    let stats = BatchStats {
        mean,
        var_unbiased: var.iter().map(|&v| v * correction).collect(),
    };
    let out = Tensor::new(xv.shape(), out)?;
    let var_out = x.tape().push_op(
        "batch_norm",
        out,
        &[x, gamma, beta],
        Box::new(move |g, needs| {
            let mut dgamma = zeros::<T>(c);
            let mut dbeta = zeros::<T>(c);
            for i in 0..n {
                for ch in 0..c {
                    let range = (i * c + ch) * s..(i * c + ch + 1) * s;
                    for (&gv, &xh) in g[range.clone()].iter().zip(&xhat[range]) {
                        dgamma[ch] += gv * xh;
                        dbeta[ch] += gv;
                    }
                }
            }
            let dx = needs[0].then(|| {
                let mut dx = zeros::<T>(n * c * s);
                for i in 0..n {
                    for ch in 0..c {
                        let gam = gv.data()[ch];
                        let k = inv_std[ch] / mf;
                        let range = (i * c + ch) * s..(i * c + ch + 1) * s;
                        for ((d, &gv), &xh) in dx[range.clone()]
                            .iter_mut()
                            .zip(&g[range.clone()])
                            .zip(&xhat[range])
                        {
                            *d = gam * k * (mf * gv - dbeta[ch] - xh * dgamma[ch]);
                        }
                    }
                }
                dx
            });
            vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
        }),
    );
    Ok((var_out, stats))
}

/// Evaluation-mode normalization with frozen statistics:
/// `y = gamma[c] * (x - mean[c]) / sqrt(var[c] + eps) + beta[c]`.
pub fn batch_norm_eval<'t, T: Real>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<Var<'t, T>> {
    let (xv, gv, bv) = (x.value(), gamma.value(), beta.value());
    let (n, c, s) = nc_rest(xv.shape()).ok_or_else(|| shape_err("batch_norm_eval", "rank < 2"))?;
    if gv.shape() != [c] || bv.shape() != [c] || mean.len() != c || var.len() != c {
        return Err(shape_err("batch_norm_eval", format!("statistics do not match {c} channels")));
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(n * c * s);
    let mut out = Vec::with_capacity(n * c * s);
    for (idx, plane) in xv.data().chunks(s).enumerate() {
        let ch = idx % c;
        for &v in plane {
            let h = (v - mean[ch]) * inv_std[ch];
            xhat.push(h);
            out.push(h * gv.data()[ch] + bv.data()[ch]);
        }
    }
    let out = Tensor::new(xv.shape(), out)?;
    let gamma_v = gv.data().to_vec();
    Ok(x.tape().push_op(
        "batch_norm_eval",
        out,
        &[x, gamma, beta],
        Box::new(move |g, needs| {
            let mut dgamma = zeros::<T>(c);
            let mut dbeta = zeros::<T>(c);
            let mut dx = needs[0].then(|| Vec::with_capacity(g.len()));
            for (idx, (gp, hp)) in g.chunks(s).zip(xhat.chunks(s)).enumerate() {
                let ch = idx % c;
                let k = gamma_v[ch] * inv_std[ch];
                for (&gv, &h) in gp.iter().zip(hp) {
                    dgamma[ch] += gv * h;
                    dbeta[ch] += gv;
                }
                if let Some(dx) = dx.as_mut() {
                    dx.extend(gp.iter().map(|&v| v * k));
                }
            }
            vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use crate::gradcheck::{check_gradients, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_of_ones_sums_window() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let w = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = conv2d(x, w, Some(b), 1, 0).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 1, 1]);
        assert_eq!(y.value().data(), &[9.0]);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random_tensor(&[2, 1, 5, 4], &mut rng);
        let tape = Tape::<f64>::new();
        let x = tape.constant(input.clone());
        let w = tape.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = conv2d(x, w, Some(b), 1, 0).unwrap();
        assert_eq!(*y.value(), input);
    }

    #[test]
    fn select_rows_gathers_and_scatters() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = select_rows(x, &[2, 0, 2]).unwrap();
        assert_eq!(y.value().data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let g = tape.backward(sum_all(y)).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(select_rows(x, &[3]).is_err());
        assert!(select_rows(x, &[]).is_err());
    }

    #[test]
    fn conv_output_geometry() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 7, 6]));
        let w = tape.constant(Tensor::zeros(&[3, 2, 3, 3]));
        let y = conv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), vec![1, 3, 4, 3]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[3, 1, 3, 3]));
        assert!(conv2d(x, w, None, 1, 0).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inputs = vec![
            random_tensor(&[2, 3, 8, 8], &mut rng),
            random_tensor(&[4, 3, 3, 3], &mut rng),
            random_tensor(&[4], &mut rng),
        ];
        let report = check_gradients(&inputs, |tape, vars| {
            let y = conv2d(vars[0], vars[1], Some(vars[2]), 2, 1)?;
            let proj = tape.constant(Tensor::from_fn(&y.shape(), |i| ((i * 7) % 5) as f64 - 2.0));
            Ok(sum_all(mul(y, proj)?))
        });
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn dense_hand_case() {
        let tape = Tape::<f64>::new();
        let y = dense(
            tape.constant(t(&[1, 2], &[1.0, 2.0])),
            tape.constant(t(&[1, 2], &[3.0, 4.0])),
            tape.constant(t(&[1], &[5.0])),
        )
        .unwrap();
        assert_eq!(y.value().data(), &[16.0]);
    }

    #[test]
    fn dense_zero_weights_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tape = Tape::<f64>::new();
        let y = dense(
            tape.constant(random_tensor(&[3, 4], &mut rng)),
            tape.constant(Tensor::zeros(&[2, 4])),
            tape.constant(Tensor::zeros(&[2])),
        )
        .unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_rejects_dim_mismatch() {
        let tape = Tape::<f64>::new();
        let r = dense(
            tape.constant(Tensor::zeros(&[1, 3])),
            tape.constant(Tensor::zeros(&[2, 4])),
            tape.constant(Tensor::zeros(&[2])),
        );
        assert!(r.is_err());
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let inputs = vec![
            random_tensor(&[3, 5], &mut rng),
            random_tensor(&[4, 5], &mut rng),
            random_tensor(&[4], &mut rng),
        ];
        let report = check_gradients(&inputs, |tape, v| {
            let y = dense(v[0], v[1], v[2])?;
            let proj = tape.constant(Tensor::from_fn(&y.shape(), |i| (i % 3) as f64 - 0.7));
            Ok(sum_all(mul(tanh(y), proj)?))
        });
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn gap_of_constant_and_hand_case() {
        let tape = Tape::<f64>::new();
        let y = global_avg_pool(tape.constant(Tensor::full(&[2, 3, 4, 5], 1.25))).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 1.25));
        let y = global_avg_pool(tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]))).unwrap();
        assert_eq!(y.value().data(), &[2.5]);
    }

    #[test]
    fn gap_gradient_is_inverse_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let tape = Tape::<f64>::new();
        let x = tape.leaf(random_tensor(&[2, 3, 4, 5], &mut rng));
        let grads = tape.backward(sum_all(global_avg_pool(x).unwrap())).unwrap();
        assert!(grads.slice(x).unwrap().iter().all(|&g| (g - 1.0 / 20.0).abs() < 1e-15));
        let inputs = vec![random_tensor(&[2, 3, 4, 5], &mut rng)];
        let report = check_gradients(&inputs, |tape, v| {
            let y = global_avg_pool(v[0])?;
            let proj = tape.constant(Tensor::from_fn(&y.shape(), |i| i as f64 * 0.3 - 0.5));
            Ok(sum_all(mul(y, proj)?))
        });
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn softmax_rows_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let tape = Tape::<f64>::new();
        let y = softmax_rows(tape.constant(random_tensor(&[50, 7], &mut rng))).unwrap();
        for row in y.value().data().chunks(7) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn elementwise_and_structural_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let inputs = vec![
            random_tensor(&[2, 4, 3], &mut rng),
            random_tensor(&[2, 4, 3], &mut rng),
            random_tensor(&[2, 4], &mut rng),
        ];
        let report = check_gradients(&inputs, |tape, v| {
            let a = sigmoid(add(v[0], v[1])?);
            let b = mul_channels(tanh(v[1]), v[2])?;
            let cat = concat_channels(&[a, b])?;
            let left = narrow_channels(cat, 2, 4)?;
            let flat = reshape(left, &[2, 12])?;
            let p = softmax_rows(flat)?;
            let proj = tape.constant(Tensor::from_fn(&[2, 12], |i| (i % 5) as f64));
            let relu_term = sum_all(relu(scale(v[0], 1.5)));
            Ok(add(sum_all(mul(p, proj)?), mean_all(relu_term))?)
        });
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn batch_norm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let inputs = vec![
            random_tensor(&[3, 2, 2, 3], &mut rng),
            random_tensor(&[2], &mut rng),
            random_tensor(&[2], &mut rng),
        ];
        let report = check_gradients(&inputs, |tape, v| {
            let (y, _) = batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            let proj = tape.constant(Tensor::from_fn(&y.shape(), |i| ((i * 3) % 7) as f64 - 3.0));
            Ok(sum_all(mul(y, proj)?))
        });
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn batch_norm_normalizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let tape = Tape::<f64>::new();
        let x = tape.constant(random_tensor(&[4, 3, 5], &mut rng));
        let (y, stats) = batch_norm_train(
            x,
            tape.constant(Tensor::full(&[3], 1.0)),
            tape.constant(Tensor::zeros(&[3])),
            0.0,
        )
        .unwrap();
        let v = y.value();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|i| v.data()[(i * 3 + ch) * 5..(i * 3 + ch + 1) * 5].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / 20.0;
            let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 20.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
        }
        assert_eq!(stats.mean.len(), 3);
    }

    #[test]
    fn eval_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = random_tensor(&[2, 3, 2, 2], &mut rng);
        let g = random_tensor(&[3], &mut rng);
        let b = random_tensor(&[3], &mut rng);
        let mean = [0.1, -0.2, 0.3];
        let var = [0.5, 1.5, 2.0];
        let report =
            check_gradients(&[x, g, b], |_, v| {
                let y = batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)?;
                Ok(sum_all(mul(y, y)?))
            });
        assert!(report.passes(&Default::default()), "{report:?}");
    }
}
