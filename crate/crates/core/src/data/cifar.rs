use std::path::Path;

use super::{Dataset, Normalization, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const RECORD: usize = 1 + 3 * 32 * 32;

/// Loads CIFAR-10 binary batch files: 3073-byte records of one label byte
/// followed by 1024 red, 1024 green and 1024 blue pixels.
pub fn load_cifar10<P: AsRef<Path>>(paths: &[P], split: Split, norm: &Normalization) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.is_empty() || bytes.len() % RECORD != 0 {
            return Err(Error::format(
                path,
                format!("length {} is not a positive multiple of {RECORD}", bytes.len()),
            ));
        }
        for rec in bytes.chunks_exact(RECORD) {
            if rec[0] >= 10 {
                return Err(Error::format(path, format!("label {} outside 0..10", rec[0])));
            }
            labels.push(rec[0] as usize);
            norm.apply(&rec[1..], 3, &mut data);
        }
    }
    let n = labels.len();
    Ok(Dataset {
        images: Tensor::from_vec(&[n, 3, 32, 32], data)?,
        labels,
        split,
        class_count: 10,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.bin");
        let mut rec = vec![9u8];
        rec.extend(std::iter::repeat_n(255u8, 1024));
        rec.extend(std::iter::repeat_n(0u8, 2048));
        std::fs::write(&path, &rec).unwrap();
        let plain = Normalization { mean: vec![0.0; 3], std: vec![1.0; 3] };
        let ds = load_cifar10(&[&path], Split::Test, &plain).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels, vec![9]);
        assert_eq!(ds.images.shape(), &[1, 3, 32, 32]);
        assert_eq!(ds.images.data()[0], 1.0);
        assert_eq!(ds.images.data()[1024], 0.0);
    }

    #[test]
    fn rejects_partial_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, vec![0u8; RECORD + 5]).unwrap();
        assert!(matches!(
            load_cifar10(&[&path], Split::Train, &Normalization::cifar10()),
            Err(Error::Format { .. })
        ));
    }
}
