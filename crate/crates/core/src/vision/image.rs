//! 8-bit RGB frames and the two container formats frames arrive in: binary
//! PPM (P6, maxval 255) and uncompressed 24-bit BMP.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("unrecognized image format (magic bytes {0:02x?})")]
    UnknownFormat(Vec<u8>),
    #[error("truncated image data: {0}")]
    Truncated(String),
    #[error("unsupported depth: {0}")]
    UnsupportedDepth(String),
    #[error("malformed image: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    /// Row-major RGB triples.
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Malformed(format!("empty image {width}x{height}")));
        }
        let want = width as usize * height as usize * 3;
        if pixels.len() != want {
            return Err(ImageError::Malformed(format!(
                "{width}x{height} image needs {want} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let pixels = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Self { width, height, pixels }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Decodes PPM or BMP, chosen by the leading magic bytes.
pub fn decode_image(bytes: &[u8]) -> Result<ImageBuffer, ImageError> {
    match bytes {
        [b'P', b'6', ..] => decode_ppm(bytes),
        [b'B', b'M', ..] => decode_bmp(bytes),
        _ => Err(ImageError::UnknownFormat(bytes.iter().take(2).copied().collect())),
    }
}

pub fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer, ImageError> {
    if !bytes.starts_with(b"P6") {
        return Err(ImageError::UnknownFormat(bytes.iter().take(2).copied().collect()));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments may precede each header number
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(ImageError::Truncated("PPM header ends early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::Malformed(format!("PPM header field {i} is not a number")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::Malformed(format!("PPM header field {i} out of range")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(ImageError::Malformed("PPM maxval not followed by whitespace".into())),
        None => return Err(ImageError::Truncated("PPM header ends early".into())),
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(ImageError::UnsupportedDepth(format!("PPM maxval {maxval}, only 255 is supported")));
    }
    if w == 0 || h == 0 || w > u32::MAX as u64 || h > u32::MAX as u64 {
        return Err(ImageError::Malformed(format!("PPM dimensions {w}x{h}")));
    }
    let need = (w * h * 3) as usize;
    let data = &bytes[pos..];
    if data.len() < need {
        return Err(ImageError::Truncated(format!("PPM payload has {} of {need} bytes", data.len())));
    }
    ImageBuffer::new(w as u32, h as u32, data[..need].to_vec())
}

const BMP_FILE_HEADER: usize = 14;
const BMP_INFO_HEADER: usize = 40;

fn bmp_row_stride(width: u32) -> usize {
    (width as usize * 3).div_ceil(4) * 4
}

/// Writes a bottom-up 24-bit BMP with a 40-byte info header.
pub fn encode_bmp(img: &ImageBuffer) -> Vec<u8> {
    let stride = bmp_row_stride(img.width);
    let data_len = stride * img.height as usize;
    let offset = BMP_FILE_HEADER + BMP_INFO_HEADER;
    let mut out = Vec::with_capacity(offset + data_len);
    out.extend_from_slice(b"BM");
    out.extend_from_slice(&((offset + data_len) as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(offset as u32).to_le_bytes());
    out.extend_from_slice(&(BMP_INFO_HEADER as u32).to_le_bytes());
    out.extend_from_slice(&(img.width as i32).to_le_bytes());
    out.extend_from_slice(&(img.height as i32).to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&24u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    // 72 dpi
    out.extend_from_slice(&2835i32.to_le_bytes());
    out.extend_from_slice(&2835i32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    let pad = stride - img.width as usize * 3;
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            let [r, g, b] = img.pixel(x, y);
            out.extend_from_slice(&[b, g, r]);
        }
        out.extend(std::iter::repeat_n(0u8, pad));
    }
    out
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn decode_bmp(bytes: &[u8]) -> Result<ImageBuffer, ImageError> {
    if !bytes.starts_with(b"BM") {
        return Err(ImageError::UnknownFormat(bytes.iter().take(2).copied().collect()));
    }
    if bytes.len() < BMP_FILE_HEADER + BMP_INFO_HEADER {
        return Err(ImageError::Truncated(format!("BMP headers need 54 bytes, got {}", bytes.len())));
    }
    let offset = le_u32(bytes, 10) as usize;
    let info_len = le_u32(bytes, 14) as usize;
    if info_len < BMP_INFO_HEADER {
        return Err(ImageError::Malformed(format!("BMP info header of {info_len} bytes is not supported")));
    }
    let width = le_u32(bytes, 18) as i32;
    let height = le_u32(bytes, 22) as i32;
    let bpp = le_u16(bytes, 28);
    let compression = le_u32(bytes, 30);
    if bpp != 24 {
        return Err(ImageError::UnsupportedDepth(format!("BMP with {bpp} bits per pixel, only 24 is supported")));
    }
    if compression != 0 {
        return Err(ImageError::Malformed(format!("compressed BMP (method {compression}) is not supported")));
    }
    if width <= 0 || height == 0 || height == i32::MIN {
        return Err(ImageError::Malformed(format!("BMP dimensions {width}x{height}")));
    }
    let (w, h) = (width as u32, height.unsigned_abs());
    let top_down = height < 0;
    let stride = bmp_row_stride(w);
    let need = stride * h as usize;
    let data = bytes.get(offset..).unwrap_or(&[]);
    // the final row's padding is commonly omitted
    let min = need - (stride - w as usize * 3);
    if data.len() < min {
        return Err(ImageError::Truncated(format!("BMP pixel array has {} of {need} bytes", data.len())));
    }
    let mut pixels = Vec::with_capacity(w as usize * h as usize * 3);
    for y in 0..h as usize {
        let row = if top_down { y } else { h as usize - 1 - y };
        let base = row * stride;
        for x in 0..w as usize {
            let p = base + x * 3;
            pixels.extend_from_slice(&[data[p + 2], data[p + 1], data[p]]);
        }
    }
    ImageBuffer::new(w, h, pixels)
}

/// 8-bit intensity plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }
}

/// Luma with weights 0.299, 0.587, 0.114, rounded half-up.
pub fn luma(rgb: [u8; 3]) -> u8 {
    // integer form of round(0.299 R + 0.587 G + 0.114 B)
    let s = 299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32;
    ((s + 500) / 1000) as u8
}

pub fn to_grayscale(img: &ImageBuffer) -> GrayImage {
    GrayImage {
        width: img.width,
        height: img.height,
        data: img.pixels.chunks_exact(3).map(|p| luma([p[0], p[1], p[2]])).collect(),
    }
}
