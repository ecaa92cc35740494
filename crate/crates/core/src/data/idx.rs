//! Reader (and writer, for fixtures) of the IDX format: big-endian u32
//! magic, big-endian u32 extents, then raw u8 payload.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::LabeledSet;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Truncated {
            what: format!("{what} header"),
        })
}

fn parse_header(bytes: &[u8], magic: u32, what: &str) -> Result<(Vec<usize>, usize)> {
    let found = read_u32(bytes, 0, what)?;
    if found != magic {
        return Err(Error::BadMagic {
            expected: format!("{magic:#010x}"),
            found: format!("{found:#010x}"),
        });
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|i| read_u32(bytes, 4 + 4 * i, what).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * rank;
    let need: usize = dims.iter().product();
    if bytes.len() - header < need {
        return Err(Error::Truncated {
            what: format!("{what} payload: {} of {need} bytes", bytes.len() - header),
        });
    }
    if bytes.len() - header > need {
        return Err(Error::Format {
            detail: format!("{what}: {} trailing bytes", bytes.len() - header - need),
        });
    }
    Ok((dims, header))
}

/// Decode an image file and a label file already in memory.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledSet> {
    let (idims, ih) = parse_header(images, IMAGES_MAGIC, "images")?;
    let (ldims, lh) = parse_header(labels, LABELS_MAGIC, "labels")?;
    let (n, h, w) = (idims[0], idims[1], idims[2]);
    if n != ldims[0] {
        return Err(Error::CountMismatch {
            detail: format!("{n} images vs {} labels", ldims[0]),
        });
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::Format {
            detail: format!("empty image extents {idims:?}"),
        });
    }
    let data = images[ih..].iter().map(|&p| f32::from(p) / 255.0).collect();
    let tensor = Tensor::new(&[n, 1, h, w], data)?;
    let label_vec: Vec<usize> = labels[lh..].iter().map(|&l| usize::from(l)).collect();
    let class_ids: Vec<usize> = label_vec.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    LabeledSet::new(tensor, label_vec, class_ids)
}

/// Load an IDX image/label file pair (single channel, pixels scaled to
/// `[0, 1]`). `class_ids` are the distinct labels, ascending.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledSet> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

/// Encode `n` images of `h x w` u8 pixels.
pub fn write_idx_images(n: usize, h: usize, w: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), n * h * w, "pixel count");
    let mut out = IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [n, h, w] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_endpoints() {
        let img = write_idx_images(2, 2, 2, &[0, 255, 255, 0, 0, 0, 255, 255]);
        let lab = write_idx_labels(&[3, 1]);
        let set = parse_idx(&img, &lab).unwrap();
        assert_eq!(set.images.shape(), &[2, 1, 2, 2]);
        assert_eq!(set.images.data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(set.class_ids, vec![1, 3]);
        assert_eq!(set.labels, vec![3, 1]);
    }

    #[test]
    fn bad_magic() {
        let mut img = write_idx_images(1, 1, 1, &[7]);
        img[3] = 0x02;
        let lab = write_idx_labels(&[0]);
        let err = parse_idx(&img, &lab).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn count_mismatch() {
        let img = write_idx_images(2, 1, 1, &[1, 2]);
        let lab = write_idx_labels(&[0, 0, 1]);
        let err = parse_idx(&img, &lab).unwrap_err();
        assert!(err.to_string().contains("count mismatch"), "{err}");
    }

    #[test]
    fn truncation() {
        let img = write_idx_images(2, 2, 2, &[1; 8]);
        let lab = write_idx_labels(&[0, 0]);
        let err = parse_idx(&img[..img.len() - 1], &lab).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }));
        assert!(matches!(parse_idx(&img[..6], &lab), Err(Error::Truncated { .. })));
    }
}
