//! Binary-to-image conversion.
//!
//! A binary file is reinterpreted as an array of 8-bit unsigned integers
//! (0 = black, 255 = white) and reshaped into a fixed-width raster whose
//! width is picked from the file size. Heights are zero-padded up to a
//! multiple of 32, and images are optionally resized to a square for the
//! downstream classifiers.

use std::io::{Read, Write};

use crate::{Error, Result};

/// Row-major 8-bit raster, one or three channels (channel-interleaved).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteImage {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub pixels: Vec<u8>,
}

impl ByteImage {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self> {
        let img = ByteImage {
            width,
            height,
            channels,
            pixels,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidConfig(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        let expect = self.width as usize * self.height as usize * self.channels as usize;
        if self.pixels.len() != expect {
            return Err(Error::shape(format!(
                "pixel buffer holds {} samples, {}x{}x{} needs {}",
                self.pixels.len(),
                self.width,
                self.height,
                self.channels,
                expect
            )));
        }
        Ok(())
    }

    /// Sample at (row, col, channel). Callers keep indices in range.
    #[inline]
    pub fn sample(&self, y: u32, x: u32, c: u8) -> u8 {
        let idx =
            (y as usize * self.width as usize + x as usize) * self.channels as usize + c as usize;
        self.pixels[idx]
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }
}

/// File-size bands (upper bound exclusive, in bytes) and the image width
/// assigned to each band. 1 KB = 1024 bytes; bands are half-open `[lo, hi)`.
#[derive(Debug, Clone)]
pub struct WidthRule {
    bands: Vec<(u64, u32)>,
}

const KB: u64 = 1024;

impl Default for WidthRule {
    fn default() -> Self {
        WidthRule {
            bands: vec![
                (10 * KB, 32),
                (30 * KB, 64),
                (60 * KB, 128),
                (100 * KB, 256),
                (200 * KB, 384),
                (500 * KB, 512),
                (1000 * KB, 768),
                (u64::MAX, 1024),
            ],
        }
    }
}

impl WidthRule {
    pub fn width_for(&self, file_size: u64) -> Result<u32> {
        if file_size == 0 {
            return Err(Error::EmptyInput);
        }
        for &(upper, width) in &self.bands {
            if file_size < upper {
                return Ok(width);
            }
        }
        // Unreachable: the last band is unbounded.
        Ok(self.bands.last().expect("width rule has bands").1)
    }

    pub fn widths(&self) -> impl Iterator<Item = u32> + '_ {
        self.bands.iter().map(|&(_, w)| w)
    }
}

/// Image width for a file of `file_size` bytes under the default rule.
pub fn width_for_size(file_size: u64) -> Result<u32> {
    WidthRule::default().width_for(file_size)
}

fn padded_height(rows: usize) -> usize {
    rows.div_ceil(32) * 32
}

/// One byte per pixel, fixed width from the file size, height zero-padded
/// to a multiple of 32.
pub fn to_gray_image(data: &[u8]) -> Result<ByteImage> {
    let width = width_for_size(data.len() as u64)? as usize;
    let raw_rows = data.len().div_ceil(width);
    let height = padded_height(raw_rows);
    let mut pixels = vec![0u8; width * height];
    pixels[..data.len()].copy_from_slice(data);
    ByteImage::new(width as u32, height as u32, 1, pixels)
}

/// Three consecutive bytes form one RGB pixel; the byte stream is
/// zero-padded to a multiple of 3 first. The width band is chosen from the
/// original byte length, heights are padded as for gray images.
pub fn to_rgb_image(data: &[u8]) -> Result<ByteImage> {
    let width = width_for_size(data.len() as u64)? as usize;
    let pixel_count = data.len().div_ceil(3);
    let raw_rows = pixel_count.div_ceil(width);
    let height = padded_height(raw_rows);
    let mut pixels = vec![0u8; width * height * 3];
    pixels[..data.len()].copy_from_slice(data);
    ByteImage::new(width as u32, height as u32, 3, pixels)
}

/// Nearest-neighbor resize to `side` x `side`. The source index is
/// `floor(dst * src_dim / dst_dim)`, so the operation is integer-only and
/// deterministic.
pub fn resize_square(img: &ByteImage, side: u32) -> Result<ByteImage> {
    img.validate()?;
    if side == 0 {
        return Err(Error::InvalidConfig("resize side must be positive".into()));
    }
    if img.width == side && img.height == side {
        return Ok(img.clone());
    }
    let ch = img.channels as usize;
    let mut pixels = vec![0u8; side as usize * side as usize * ch];
    let (sw, sh, dw) = (img.width as u64, img.height as u64, side as u64);
    for y in 0..side as u64 {
        let sy = (y * sh / dw) as usize;
        let src_row = sy * img.width as usize * ch;
        let dst_row = y as usize * side as usize * ch;
        for x in 0..side as u64 {
            let sx = (x * sw / dw) as usize;
            let src = src_row + sx * ch;
            let dst = dst_row + x as usize * ch;
            pixels[dst..dst + ch].copy_from_slice(&img.pixels[src..src + ch]);
        }
    }
    ByteImage::new(side, side, img.channels, pixels)
}

const RAW_MAGIC: &[u8; 4] = b"MLIM";

/// Raw dump: 16-byte header (magic "MLIM", u16 width, u16 height,
/// u8 channels, 7 reserved zero bytes) then row-major samples,
/// little-endian integers.
pub fn write_raw<W: Write>(img: &ByteImage, mut w: W) -> Result<()> {
    img.validate()?;
    if img.width > u16::MAX as u32 || img.height > u16::MAX as u32 {
        return Err(Error::format(format!(
            "{}x{} exceeds the u16 raw-dump header range",
            img.width, img.height
        )));
    }
    w.write_all(RAW_MAGIC)?;
    w.write_all(&(img.width as u16).to_le_bytes())?;
    w.write_all(&(img.height as u16).to_le_bytes())?;
    w.write_all(&[img.channels])?;
    w.write_all(&[0u8; 7])?;
    w.write_all(&img.pixels)?;
    Ok(())
}

pub fn read_raw<R: Read>(mut r: R) -> Result<ByteImage> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| Error::format("raw image truncated before header end"))?;
    if &header[..4] != RAW_MAGIC {
        return Err(Error::format("bad raw image magic"));
    }
    let width = u16::from_le_bytes([header[4], header[5]]) as u32;
    let height = u16::from_le_bytes([header[6], header[7]]) as u32;
    let channels = header[8];
    if header[9..].iter().any(|&b| b != 0) {
        return Err(Error::format("nonzero reserved bytes in raw image header"));
    }
    let mut pixels = vec![0u8; width as usize * height as usize * channels as usize];
    r.read_exact(&mut pixels)
        .map_err(|_| Error::format("raw image truncated before payload end"))?;
    ByteImage::new(width, height, channels, pixels)
}

/// PNG bytes for inspection (8-bit gray or 8-bit/channel RGB).
pub fn to_png_bytes(img: &ByteImage) -> Result<Vec<u8>> {
    img.validate()?;
    let mut out = std::io::Cursor::new(Vec::new());
    let color = match img.channels {
        1 => image::ExtendedColorType::L8,
        _ => image::ExtendedColorType::Rgb8,
    };
    image::write_buffer_with_format(
        &mut out,
        &img.pixels,
        img.width,
        img.height,
        color,
        image::ImageFormat::Png,
    )?;
    Ok(out.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table1_paper_rows() {
        assert_eq!(width_for_size(5 * 1024).unwrap(), 32);
        assert_eq!(width_for_size(2 * 1024 * 1024).unwrap(), 1024);
    }

    #[test]
    fn table1_boundaries_half_open() {
        // Band edges in KB and the widths on each side of the edge.
        let edges = [
            (10, 32, 64),
            (30, 64, 128),
            (60, 128, 256),
            (100, 256, 384),
            (200, 384, 512),
            (500, 512, 768),
            (1000, 768, 1024),
        ];
        for (kb, below, at) in edges {
            let bytes = kb * 1024u64;
            assert_eq!(width_for_size(bytes - 1).unwrap(), below, "{kb} KB - 1");
            assert_eq!(width_for_size(bytes).unwrap(), at, "{kb} KB");
        }
        assert_eq!(width_for_size(1).unwrap(), 32);
        assert_eq!(width_for_size(10 * 1024).unwrap(), 64);
    }

    #[test]
    fn zero_size_is_empty_input() {
        assert!(matches!(width_for_size(0), Err(Error::EmptyInput)));
        assert!(matches!(to_gray_image(&[]), Err(Error::EmptyInput)));
        assert!(matches!(to_rgb_image(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn gray_pads_height_to_32() {
        let img = to_gray_image(&[7u8; 64]).unwrap();
        assert_eq!((img.width, img.height, img.channels), (32, 32, 1));
        assert!(img.pixels[..64].iter().all(|&b| b == 7));
        assert!(img.pixels[64..].iter().all(|&b| b == 0));
    }

    #[test]
    fn gray_9458_bytes_rounds_to_320_rows() {
        let img = to_gray_image(&vec![1u8; 9458]).unwrap();
        assert_eq!(img.width, 32);
        assert_eq!(img.height, 320); // ceil(9458/32) = 296, padded to 320
    }

    #[test]
    fn gray_maps_bytes_to_intensities() {
        let img = to_gray_image(&[0xFF; 40]).unwrap();
        assert!(img.pixels[..40].iter().all(|&b| b == 255));
    }

    #[test]
    fn rgb_interleaves_triples() {
        let img = to_rgb_image(&[1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(&img.pixels[..6], &[1, 2, 3, 4, 5, 6]);
        assert_eq!(img.sample(0, 0, 0), 1);
        assert_eq!(img.sample(0, 1, 2), 6);
    }

    #[test]
    fn rgb_pads_partial_pixel() {
        let img = to_rgb_image(&[0x41]).unwrap();
        assert_eq!((img.width, img.height, img.channels), (32, 32, 3));
        assert_eq!(&img.pixels[..3], &[65, 0, 0]);
        assert!(img.pixels[3..].iter().all(|&b| b == 0));
    }

    #[test]
    fn rgb_300_bytes_is_100_pixels() {
        let img = to_rgb_image(&[9u8; 300]).unwrap();
        assert_eq!((img.width, img.height), (32, 32));
        assert_eq!(img.pixels.len(), 32 * 32 * 3);
    }

    #[test]
    fn resize_identity() {
        let data: Vec<u8> = (0..256 * 256).map(|i| (i % 251) as u8).collect();
        let img = ByteImage::new(256, 256, 1, data).unwrap();
        assert_eq!(resize_square(&img, 256).unwrap(), img);
    }

    #[test]
    fn resize_upscale_replicates_blocks() {
        let data: Vec<u8> = (0..32 * 32).map(|i| (i % 256) as u8).collect();
        let img = ByteImage::new(32, 32, 1, data).unwrap();
        let big = resize_square(&img, 256).unwrap();
        for y in 0..256u32 {
            for x in 0..256u32 {
                assert_eq!(big.sample(y, x, 0), img.sample(y / 8, x / 8, 0));
            }
        }
    }

    #[test]
    fn resize_matches_naive_reference() {
        // 64x320 -> 256: output(y,x) = input(floor(y*320/256), floor(x*64/256))
        let data: Vec<u8> = (0..64usize * 320).map(|i| (i * 31 % 256) as u8).collect();
        let img = ByteImage::new(64, 320, 1, data).unwrap();
        let out = resize_square(&img, 256).unwrap();
        for y in 0..256u64 {
            for x in 0..256u64 {
                let expect = img.sample((y * 320 / 256) as u32, (x * 64 / 256) as u32, 0);
                assert_eq!(out.sample(y as u32, x as u32, 0), expect, "at ({y},{x})");
            }
        }
    }

    #[test]
    fn raw_dump_round_trips() {
        let img = to_gray_image(&[3u8; 100]).unwrap();
        let mut buf = Vec::new();
        write_raw(&img, &mut buf).unwrap();
        assert_eq!(buf.len(), 16 + img.pixels.len());
        assert_eq!(&buf[..4], b"MLIM");
        let back = read_raw(buf.as_slice()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn raw_dump_rejects_bad_magic() {
        let img = to_gray_image(&[3u8; 100]).unwrap();
        let mut buf = Vec::new();
        write_raw(&img, &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_raw(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn png_round_trips_pixels() {
        let img = to_rgb_image(&(0..=255).collect::<Vec<u8>>()).unwrap();
        let png = to_png_bytes(&img).unwrap();
        let decoded = image::load_from_memory(&png).unwrap().into_rgb8();
        assert_eq!(decoded.as_raw(), &img.pixels);
    }

    proptest! {
        #[test]
        fn gray_no_padding_when_len_is_width_multiple(k in 1usize..=8, seed in any::<u64>()) {
            // 32*32*k bytes stays below 10 KB, so the width is always 32 and
            // the height lands exactly on a multiple of 32: no padding.
            let len = 32 * 32 * k;
            let data: Vec<u8> = (0..len).map(|i| ((i as u64).wrapping_mul(seed) >> 3) as u8).collect();
            let img = to_gray_image(&data).unwrap();
            prop_assert_eq!(img.height as usize, 32 * k);
            prop_assert_eq!(&img.pixels, &data);
        }

        #[test]
        fn width_is_monotone_in_size(a in 1u64..3_000_000, b in 1u64..3_000_000) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(width_for_size(lo).unwrap() <= width_for_size(hi).unwrap());
        }

        #[test]
        fn resize_is_idempotent_on_squares(side in 1u32..64, fill in any::<u8>()) {
            let img = ByteImage::new(side, side, 1, vec![fill; (side * side) as usize]).unwrap();
            let once = resize_square(&img, side).unwrap();
            prop_assert_eq!(once, img);
        }
    }

    #[test]
    fn width_range_is_exactly_table1() {
        let mut seen = std::collections::BTreeSet::new();
        let mut size = 1u64;
        while size < 4_000_000 {
            seen.insert(width_for_size(size).unwrap());
            size += 512;
        }
        let expect: std::collections::BTreeSet<u32> = [32, 64, 128, 256, 384, 512, 768, 1024]
            .into_iter()
            .collect();
        assert_eq!(seen, expect);
    }
}
