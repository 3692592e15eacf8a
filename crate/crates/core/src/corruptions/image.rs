use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "V")]
    Visible,
    #[serde(rename = "I")]
    Infrared,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::Visible, Modality::Infrared];

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Visible => "V",
            Modality::Infrared => "I",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Visible => "visible",
            Modality::Infrared => "infrared",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("image must be non-empty, got {0}x{1}")]
    Empty(usize, usize),
    #[error("{height}x{width}x3 image needs {expected} bytes, got {actual}")]
    Length {
        height: usize,
        width: usize,
        expected: usize,
        actual: usize,
    },
    #[error("infrared image has a pixel with R, G, B not all equal")]
    NotGray,
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: ::image::ImageError,
    },
}

/// 8-bit, 3-channel, row-major (HWC) image tagged with its modality.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuf {
    height: usize,
    width: usize,
    data: Vec<u8>,
    modality: Modality,
}

impl ImageBuf {
    pub fn from_raw(
        height: usize,
        width: usize,
        data: Vec<u8>,
        modality: Modality,
    ) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::Empty(height, width));
        }
        if data.len() != height * width * 3 {
            return Err(ImageError::Length {
                height,
                width,
                expected: height * width * 3,
                actual: data.len(),
            });
        }
        let img = Self {
            height,
            width,
            data,
            modality,
        };
        if modality == Modality::Infrared && !img.is_gray() {
            return Err(ImageError::NotGray);
        }
        Ok(img)
    }

    /// Infrared image from one intensity value per pixel.
    pub fn from_gray(height: usize, width: usize, gray: &[u8]) -> Result<Self, ImageError> {
        let data = gray.iter().flat_map(|&v| [v; 3]).collect();
        Self::from_raw(height, width, data, Modality::Infrared)
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3], modality: Modality) -> Result<Self, ImageError> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::from_raw(height, width, data, modality)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn is_gray(&self) -> bool {
        self.data.chunks_exact(3).all(|p| p[0] == p[1] && p[1] == p[2])
    }

    pub fn load(path: &Path, modality: Modality) -> Result<Self, ImageError> {
        let img = ::image::open(path)
            .map_err(|source| ImageError::Io {
                path: path.display().to_string(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw();
        match modality {
            Modality::Visible => Self::from_raw(h as usize, w as usize, data, modality),
            Modality::Infrared => {
                let gray = Self::from_raw(h as usize, w as usize, data, Modality::Visible)?;
                let g = super::grayscale(&gray);
                Self::from_raw(g.height, g.width, g.data, Modality::Infrared)
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        ::image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            ::image::ColorType::Rgb8,
            ::image::ImageFormat::Png,
        )
        .map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
