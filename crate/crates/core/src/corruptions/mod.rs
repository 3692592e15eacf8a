//! Visible and infrared image corruptions with five severity levels.
//!
//! Infrared images are grayscale stored in three channels. Every transform
//! runs on a single luminance plane for them and the result is replicated,
//! so R = G = B holds by construction.

mod blur;
pub mod constants;
mod digital;
mod filters;
mod image;
mod noise;
mod weather;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use self::image::{ImageBuf, ImageError, Modality};
pub use constants::{Constants, CONSTANTS_TEXT};
use filters::Planes;

#[derive(Debug, thiserror::Error)]
pub enum CorruptionError {
    #[error("{kind} is not applicable to the {modality} modality")]
    NotApplicable { kind: CorruptionKind, modality: Modality },
    #[error("severity {0} outside 1..=5")]
    Severity(u8),
    #[error("unknown corruption kind {0:?}")]
    UnknownKind(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CorruptionGroup {
    Noise,
    Blur,
    Weather,
    Digital,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    SpeckleNoise,
    DefocusBlur,
    GlassBlur,
    MotionBlur,
    ZoomBlur,
    GaussianBlur,
    Snow,
    Frost,
    Fog,
    Brightness,
    Rain,
    Spatter,
    Contrast,
    ElasticTransform,
    Pixelate,
    JpegCompression,
    Saturate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 20] = [
        Self::GaussianNoise,
        Self::ShotNoise,
        Self::ImpulseNoise,
        Self::SpeckleNoise,
        Self::DefocusBlur,
        Self::GlassBlur,
        Self::MotionBlur,
        Self::ZoomBlur,
        Self::GaussianBlur,
        Self::Snow,
        Self::Frost,
        Self::Fog,
        Self::Brightness,
        Self::Rain,
        Self::Spatter,
        Self::Contrast,
        Self::ElasticTransform,
        Self::Pixelate,
        Self::JpegCompression,
        Self::Saturate,
    ];

    /// Kinds that apply to `modality`, in declaration order.
    pub fn applicable(modality: Modality) -> Vec<CorruptionKind> {
        Self::ALL
            .into_iter()
            .filter(|&k| is_applicable(k, modality))
            .collect()
    }

    pub fn group(self) -> CorruptionGroup {
        use CorruptionKind::*;
        match self {
            GaussianNoise | ShotNoise | ImpulseNoise | SpeckleNoise => CorruptionGroup::Noise,
            DefocusBlur | GlassBlur | MotionBlur | ZoomBlur | GaussianBlur => CorruptionGroup::Blur,
            Snow | Frost | Fog | Brightness | Rain | Spatter => CorruptionGroup::Weather,
            Contrast | ElasticTransform | Pixelate | JpegCompression | Saturate => {
                CorruptionGroup::Digital
            }
        }
    }

    pub fn name(self) -> &'static str {
        use CorruptionKind::*;
        match self {
            GaussianNoise => "gaussian_noise",
            ShotNoise => "shot_noise",
            ImpulseNoise => "impulse_noise",
            SpeckleNoise => "speckle_noise",
            DefocusBlur => "defocus_blur",
            GlassBlur => "glass_blur",
            MotionBlur => "motion_blur",
            ZoomBlur => "zoom_blur",
            GaussianBlur => "gaussian_blur",
            Snow => "snow",
            Frost => "frost",
            Fog => "fog",
            Brightness => "brightness",
            Rain => "rain",
            Spatter => "spatter",
            Contrast => "contrast",
            ElasticTransform => "elastic_transform",
            Pixelate => "pixelate",
            JpegCompression => "jpeg_compression",
            Saturate => "saturate",
        }
    }

    /// Whether the output ignores the random stream.
    pub fn is_deterministic(self) -> bool {
        use CorruptionKind::*;
        matches!(
            self,
            Contrast | Pixelate | JpegCompression | Brightness | Saturate | ZoomBlur | DefocusBlur
                | GaussianBlur
        )
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = CorruptionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CorruptionError::UnknownKind(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Severity(u8);

impl Severity {
    pub const ALL: [Severity; 5] = [Severity(1), Severity(2), Severity(3), Severity(4), Severity(5)];

    pub fn new(level: u8) -> Result<Self, CorruptionError> {
        if (1..=5).contains(&level) {
            Ok(Self(level))
        } else {
            Err(CorruptionError::Severity(level))
        }
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub(crate) fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl TryFrom<u8> for Severity {
    type Error = CorruptionError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<Severity> for u8 {
    fn from(s: Severity) -> u8 {
        s.0
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Brightness is the one kind with no infrared counterpart.
pub fn is_applicable(kind: CorruptionKind, modality: Modality) -> bool {
    !(kind == CorruptionKind::Brightness && modality == Modality::Infrared)
}

/// ITU-R 601 luminance replicated to three channels.
pub fn grayscale(image: &ImageBuf) -> ImageBuf {
    let data = image
        .data()
        .chunks_exact(3)
        .flat_map(|p| [filters::luma_u8(p[0], p[1], p[2]); 3])
        .collect();
    ImageBuf::from_raw(image.height(), image.width(), data, image.modality())
        .expect("same dimensions")
}

/// Applies `kind` at `severity` using the built-in constants.
pub fn apply<R: Rng + ?Sized>(
    kind: CorruptionKind,
    severity: Severity,
    image: &ImageBuf,
    rng: &mut R,
) -> Result<ImageBuf, CorruptionError> {
    apply_with(constants::builtin(), kind, severity, image, rng)
}

pub fn apply_with<R: Rng + ?Sized>(
    table: &Constants,
    kind: CorruptionKind,
    severity: Severity,
    image: &ImageBuf,
    rng: &mut R,
) -> Result<ImageBuf, CorruptionError> {
    let modality = image.modality();
    if !is_applicable(kind, modality) {
        return Err(CorruptionError::NotApplicable { kind, modality });
    }
    let p = |name: &str| table.get(kind, name, severity);
    if kind == CorruptionKind::JpegCompression {
        return Ok(digital::jpeg(image, p("quality").round() as u8)?);
    }
    let mut x = Planes::from_image(image);
    use CorruptionKind::*;
    match kind {
        GaussianNoise => noise::gaussian(&mut x, p("sigma"), rng),
        ShotNoise => noise::shot(&mut x, p("photons"), rng),
        ImpulseNoise => noise::impulse(&mut x, p("amount"), rng),
        SpeckleNoise => noise::speckle(&mut x, p("sigma"), rng),
        DefocusBlur => blur::defocus(&mut x, p("radius"), p("alias_sigma")),
        GlassBlur => blur::glass(
            &mut x,
            p("sigma"),
            p("max_delta") as usize,
            p("iterations") as usize,
            rng,
        ),
        MotionBlur => blur::motion(&mut x, p("radius"), p("sigma"), rng),
        ZoomBlur => blur::zoom(&mut x, p("max_zoom"), p("step")),
        GaussianBlur => x.map_planes(|pl, h, w| filters::gaussian_blur(pl, h, w, p("sigma"))),
        Snow => weather::snow(&mut x, &weather::SnowParams::from_table(&p), rng),
        Frost => weather::frost(&mut x, p("image_weight"), p("frost_weight"), rng),
        Fog => weather::fog(&mut x, p("strength"), p("decay"), rng),
        Brightness => digital::brightness(&mut x, p("shift")),
        Rain => weather::rain(&mut x, p("density"), p("length"), p("intensity"), rng),
        Spatter => weather::spatter(&mut x, &weather::SpatterParams::from_table(&p), rng),
        Contrast => digital::contrast(&mut x, p("factor")),
        ElasticTransform => digital::elastic(&mut x, p("alpha"), p("sigma"), p("affine"), rng),
        Pixelate => digital::pixelate(&mut x, p("factor")),
        Saturate => match modality {
            Modality::Visible => digital::saturate(&mut x, p("scale"), p("shift")),
            Modality::Infrared => digital::lift(&mut x, p("infrared_gamma")),
        },
        JpegCompression => unreachable!("handled above"),
    }
    Ok(x.to_image(modality))
}

#[cfg(test)]
pub(crate) mod tests;
