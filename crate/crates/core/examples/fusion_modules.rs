//! The attention modules at their neutral points, then after a nudge.

use mmreid::gradcheck::random_tensor;
use mmreid::model::fusion::{man_fuse, mmtm_refactor, ManVars, MmtmVars};
use mmreid::model::VectorFusion;
use mmreid::tensor::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tape = Tape::inference();
    let fv = tape.constant(random_tensor(&[2, 4], &mut rng));
    let fi = tape.constant(random_tensor(&[2, 4], &mut rng));
    for b in [0.0, 1.5] {
        let vars = ManVars {
            w1: tape.constant(Tensor::zeros(&[3, 8])),
            b1: tape.constant(Tensor::zeros(&[3])),
            w2: tape.constant(Tensor::zeros(&[2, 3])),
            b2: tape.constant(Tensor::new(&[2], vec![b, -b]).unwrap()),
        };
        let (w, _) = man_fuse(fv, fi, &vars, VectorFusion::Sum).unwrap();
        println!("MAN bias {b:+}: weights {:?}", w.value().data());
    }

    let maps_v = tape.constant(random_tensor(&[1, 4, 2, 2], &mut rng));
    let maps_i = tape.constant(random_tensor(&[1, 4, 2, 2], &mut rng));
    for g in [0.0, 0.8] {
        let c = |s: &[usize]| tape.constant(Tensor::full(s, g));
        let vars = MmtmVars {
            joint_w: c(&[2, 8]),
            joint_b: c(&[2]),
            gate_v_w: c(&[4, 2]),
            gate_v_b: c(&[4]),
            gate_i_w: c(&[4, 2]),
            gate_i_b: c(&[4]),
        };
        let (ov, _) = mmtm_refactor(maps_v, maps_i, &vars).unwrap();
        let same = ov.value().data() == maps_v.value().data();
        println!("MMTM weights {g}: visible maps unchanged = {same}");
    }
}
