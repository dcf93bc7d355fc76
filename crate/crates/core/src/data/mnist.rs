use std::path::Path;

use super::{Dataset, Normalization, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, "file ends inside the header"))
}

/// Loads an IDX image file (`0x00000803`, `[N, rows, cols]` u8) and its IDX
/// label file (`0x00000801`, `[N]` u8), scaling pixels to `[0, 1]` and then
/// standardizing them.
pub fn load_mnist_idx(
    image_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
    split: Split,
    norm: &Normalization,
) -> Result<Dataset> {
    let (ip, lp) = (image_path.as_ref(), label_path.as_ref());
    let images = read(ip)?;
    let labels = read(lp)?;

    let magic = be_u32(&images, 0, ip)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(ip, format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(&images, 4, ip)? as usize;
    let rows = be_u32(&images, 8, ip)? as usize;
    let cols = be_u32(&images, 12, ip)? as usize;
    if images.len() != 16 + n * rows * cols {
        return Err(Error::format(
            ip,
            format!("expected {} bytes for {n} images of {rows}x{cols}, found {}", 16 + n * rows * cols, images.len()),
        ));
    }

    let magic = be_u32(&labels, 0, lp)?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(lp, format!("bad label magic {magic:#010x}")));
    }
    let ln = be_u32(&labels, 4, lp)? as usize;
    if ln != n {
        return Err(Error::format(lp, format!("{ln} labels for {n} images")));
    }
    if labels.len() != 8 + n {
        return Err(Error::format(lp, format!("expected {} bytes, found {}", 8 + n, labels.len())));
    }
    let labels: Vec<usize> = labels[8..].iter().map(|&b| b as usize).collect();
    if let Some(bad) = labels.iter().find(|&&l| l >= 10) {
        return Err(Error::format(lp, format!("label {bad} outside 0..10")));
    }

    let mut data = Vec::with_capacity(n * rows * cols);
    for img in images[16..].chunks_exact(rows * cols) {
        norm.apply(img, 1, &mut data);
    }
    Ok(Dataset {
        images: Tensor::from_vec(&[n, 1, rows, cols], data)?,
        labels,
        split,
        class_count: 10,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Writes a tiny IDX pair to `dir` and returns the two paths.
    pub(crate) fn write_idx(dir: &Path, pixels: &[[u8; 4]], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let mut img = Vec::new();
        img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        img.extend_from_slice(&(pixels.len() as u32).to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        for p in pixels {
            img.extend_from_slice(p);
        }
        let mut lab = Vec::new();
        lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lab.extend_from_slice(labels);
        let (ip, lp) = (dir.join("img-idx3-ubyte"), dir.join("lab-idx1-ubyte"));
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lab).unwrap();
        (ip, lp)
    }

    #[test]
    fn parses_pixels_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), &[[0, 255, 0, 255], [255; 4]], &[7, 3]);
        let plain = Normalization { mean: vec![0.0], std: vec![1.0] };
        let ds = load_mnist_idx(&ip, &lp, Split::Train, &plain).unwrap();
        assert_eq!(ds.images.shape(), &[2, 1, 2, 2]);
        assert_eq!(ds.labels, vec![7, 3]);
        assert_eq!(ds.images.row(0), &[0.0, 1.0, 0.0, 1.0]);

        let std = load_mnist_idx(&ip, &lp, Split::Train, &Normalization::mnist()).unwrap();
        assert!((std.images.data()[0] - (-0.1307 / 0.3081)).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_magic_truncation_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), &[[1, 2, 3, 4], [5, 6, 7, 8]], &[1, 2]);
        let norm = Normalization::mnist();

        let bytes = std::fs::read(&ip).unwrap();
        std::fs::write(&ip, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_mnist_idx(&ip, &lp, Split::Train, &norm), Err(Error::Format { .. })));

        std::fs::write(&ip, &bytes).unwrap();
        let mut lab = std::fs::read(&lp).unwrap();
        lab[3] = 0x03;
        std::fs::write(&lp, &lab).unwrap();
        assert!(matches!(load_mnist_idx(&ip, &lp, Split::Train, &norm), Err(Error::Format { .. })));

        let (ip, lp) = write_idx(dir.path(), &[[1, 2, 3, 4], [5, 6, 7, 8]], &[1]);
        assert!(matches!(load_mnist_idx(&ip, &lp, Split::Train, &norm), Err(Error::Format { .. })));
    }
}
