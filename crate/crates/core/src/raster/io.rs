//! Binary PGM ("P5") and grayscale PFM ("Pf") codecs.

use std::path::Path;

use super::Image2D;
use crate::error::{Error, Result};

fn pgm_err(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "PGM",
        reason: reason.into(),
    }
}

fn pfm_err(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "PFM",
        reason: reason.into(),
    }
}

/// Reads whitespace-separated header tokens, skipping `#` comments. Returns
/// the tokens and the offset just past the single whitespace byte that
/// terminates the last token.
fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return None;
    }
    Some((tokens, i + 1))
}

fn parse_dim(token: &str, what: &str, err: fn(String) -> Error) -> Result<usize> {
    token
        .parse::<usize>()
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| err(format!("bad {what} {token:?}")))
}

/// Decodes a binary PGM. 8- and 16-bit payloads are scaled to [0, 1].
pub fn parse_pgm(bytes: &[u8]) -> Result<Image2D> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(pgm_err("magic is not P5"));
    }
    let (tokens, offset) = header_tokens(bytes, 4).ok_or_else(|| pgm_err("truncated header"))?;
    let width = parse_dim(&tokens[1], "width", pgm_err)?;
    let height = parse_dim(&tokens[2], "height", pgm_err)?;
    let maxval: u32 = tokens[3]
        .parse()
        .map_err(|_| pgm_err(format!("bad max value {:?}", tokens[3])))?;
    let bytes_per_sample = match maxval {
        255 => 1,
        65535 => 2,
        other => return Err(pgm_err(format!("max value {other} is not 255 or 65535"))),
    };
    let payload = &bytes[offset..];
    let needed = width * height * bytes_per_sample;
    if payload.len() < needed {
        return Err(Error::io(
            "<pgm payload>",
            std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("expected {needed} payload bytes, found {}", payload.len()),
            ),
        ));
    }
    let data = if bytes_per_sample == 1 {
        payload[..needed].iter().map(|&b| b as f32 / 255.0).collect()
    } else {
        payload[..needed]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0)
            .collect()
    };
    Image2D::from_vec(width, height, data)
}

/// 8-bit binary PGM; values are clamped to [0, 1] and rounded.
pub fn encode_pgm(img: &Image2D) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn save_pgm(img: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

/// Decodes a little-endian grayscale PFM. Rows are stored bottom-to-top.
pub fn parse_pfm(bytes: &[u8]) -> Result<Image2D> {
    if bytes.len() < 2 {
        return Err(pfm_err("truncated header"));
    }
    match &bytes[..2] {
        b"Pf" => {}
        b"PF" => {
            return Err(Error::Unsupported {
                format: "PFM",
                reason: "three-channel PF images".into(),
            })
        }
        _ => return Err(pfm_err("magic is not Pf")),
    }
    let (tokens, offset) = header_tokens(bytes, 4).ok_or_else(|| pfm_err("truncated header"))?;
    let width = parse_dim(&tokens[1], "width", pfm_err)?;
    let height = parse_dim(&tokens[2], "height", pfm_err)?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| pfm_err(format!("bad scale {:?}", tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(pfm_err("scale must be non-zero"));
    }
    if scale > 0.0 {
        return Err(Error::Unsupported {
            format: "PFM",
            reason: "big-endian payload (positive scale)".into(),
        });
    }
    let payload = &bytes[offset..];
    let needed = width * height * 4;
    if payload.len() < needed {
        return Err(Error::io(
            "<pfm payload>",
            std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("expected {needed} payload bytes, found {}", payload.len()),
            ),
        ));
    }
    let mut data = vec![0.0f32; width * height];
    for (file_row, chunk) in payload[..needed].chunks_exact(width * 4).enumerate() {
        let y = height - 1 - file_row;
        for (x, c) in chunk.chunks_exact(4).enumerate() {
            data[y * width + x] = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
    }
    Image2D::from_vec(width, height, data)
}

pub fn encode_pfm(img: &Image2D) -> Vec<u8> {
    let (w, h) = img.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for &v in &img.data()[y * w..(y + 1) * w] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_pfm(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pfm(&bytes).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn save_pfm(img: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pfm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pgm_hand_encoded() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 255, 0, 255]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!(img.dims(), (2, 2));
        assert_eq!(img.data(), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(encode_pgm(&img), bytes);
    }

    #[test]
    fn pgm_16_bit_and_comments() {
        let mut bytes = b"P5\n# made by hand\n2 1\n65535\n".to_vec();
        bytes.extend([0x00, 0x00, 0xff, 0xff]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn pgm_rejects_ascii_magic() {
        let err = parse_pgm(b"P2\n1 1\n255\n0\n").unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn pgm_truncated_payload_is_io() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([1u8, 2]);
        assert!(matches!(parse_pgm(&bytes), Err(Error::Io { .. })));
    }

    #[test]
    fn pfm_hand_encoded() {
        let img = Image2D::from_vec(1, 1, vec![0.5]).unwrap();
        let mut expected = b"Pf\n1 1\n-1.0\n".to_vec();
        expected.extend([0x00, 0x00, 0x00, 0x3f]);
        assert_eq!(encode_pfm(&img), expected);
        assert_eq!(parse_pfm(&expected).unwrap(), img);
    }

    #[test]
    fn pfm_rows_bottom_to_top() {
        let img = Image2D::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&img);
        let payload = &bytes[bytes.len() - 8..];
        assert_eq!(&payload[..4], &2.0f32.to_le_bytes());
    }

    #[test]
    fn pfm_rejects_variants() {
        assert!(matches!(
            parse_pfm(b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0"),
            Err(Error::Unsupported { .. })
        ));
        assert!(matches!(
            parse_pfm(b"Pf\n1 1\n1.0\n\0\0\0\0"),
            Err(Error::Unsupported { .. })
        ));
    }

    proptest! {
        #[test]
        fn pfm_round_trip_bit_exact(w in 1usize..8, h in 1usize..8, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..w * h).map(|_| rng.random_range(-10.0f32..10.0)).collect();
            let img = Image2D::from_vec(w, h, data).unwrap();
            let back = parse_pfm(&encode_pfm(&img)).unwrap();
            prop_assert!(back.data().iter().zip(img.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn pgm_round_trip_within_quantum(data in proptest::collection::vec(0.0f32..=1.0, 12)) {
            let img = Image2D::from_vec(4, 3, data).unwrap();
            let back = parse_pgm(&encode_pgm(&img)).unwrap();
            for (a, b) in back.data().iter().zip(img.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 255.0);
            }
        }
    }
}
