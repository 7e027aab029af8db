//! 8-bit RGB images with a bit-exact binary PPM (P6) codec and a PNG adapter.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    /// Row-major interleaved RGB.
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::usage("image dimensions must be positive"));
        }
        if pixels.len() != 3 * width * height {
            return Err(Error::dim("Image::new", "len", 3 * width * height, pixels.len()));
        }
        Ok(Image { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(3 * width * height).collect();
        Self::new(width, height, pixels)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(3 * width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::usage(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }

    /// Largest top-left crop whose sides are multiples of `m`.
    pub fn modcrop(&self, m: usize) -> Result<Self> {
        let (w, h) = (self.width - self.width % m, self.height - self.height % m);
        if w == 0 || h == 0 {
            return Err(Error::usage(format!("image smaller than {m} pixels")));
        }
        self.crop(0, 0, w, h)
    }

    /// (1, 3, H, W) tensor of raw 0..255 values.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(Shape::new(1, 3, self.height, self.width), |[_, c, y, x]| {
            T::from_u8(self.pixels[3 * (y * self.width + x) + c]).expect("u8 fits")
        })
    }

    /// Rounds and clamps sample `n` of a (N, 3, H, W) tensor in 0..255 units.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let s = t.shape();
        if s.c() != 3 {
            return Err(Error::dim("Image::from_tensor", "C", 3, s.c()));
        }
        if n >= s.n() {
            return Err(Error::usage(format!("sample {n} out of range for batch {}", s.n())));
        }
        Self::from_fn(s.w(), s.h(), |x, y| {
            let px = |c| {
                let v = t.at(n, c, y, x).to_f64_lossy();
                if v.is_nan() {
                    0
                } else {
                    v.round().clamp(0.0, 255.0) as u8
                }
            };
            [px(0), px(1), px(2)]
        })
    }
}

/// Parses a binary P6 file with maxval 255. Comments are allowed in the header.
pub fn parse_ppm(bytes: &[u8], path: &str) -> Result<Image> {
    let err = |offset: usize, message: &str| Error::Parse {
        path: path.to_string(),
        offset,
        message: message.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(err(0, "missing P6 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(err(pos, "expected a decimal header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| err(start, "header field out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(err(pos, "only maxval 255 is supported"));
    }
    if width == 0 || height == 0 {
        return Err(err(pos, "zero image dimension"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(err(pos, "expected whitespace after maxval")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| err(pos, "image dimensions overflow"))?;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(err(bytes.len(), &format!("truncated payload: {} of {need} bytes", payload.len())));
    }
    Image::new(width, height, payload[..need].to_vec())
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Loads a P6 PPM or a PNG, chosen by the file's magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"P6") {
        return parse_ppm(&bytes, &path.display().to_string());
    }
    if bytes.starts_with(b"\x89PNG") {
        let rgb = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)?.to_rgb8();
        let (w, h) = rgb.dimensions();
        return Image::new(w as usize, h as usize, rgb.into_raw());
    }
    let message = match bytes.get(..2) {
        Some([b'P', d]) if d.is_ascii_digit() => format!("netpbm variant P{} is not supported", *d as char),
        _ => "not a P6 PPM or PNG file".to_string(),
    };
    Err(Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

/// Writes PPM for `.ppm` paths and PNG for `.png` paths.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("ppm") => fs::write(path, encode_ppm(img))?,
        Some("png") => {
            let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
                .expect("buffer length checked at construction");
            buf.save_with_format(path, image::ImageFormat::Png)?;
        }
        _ => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "output extension must be .ppm or .png".to_string(),
            })
        }
    }
    Ok(())
}
