//! Dataset file: a UTF-8 header line
//!
//! ```text
//! FEDSET v1 <num_samples> <channels> <width> <num_classes>\n
//! ```
//!
//! followed by `num_samples * channels * width` little-endian `f64`
//! features and `num_samples` little-endian `u16` labels.

use std::path::Path;

use crate::data::{DataError, Dataset};
use crate::scalar::Scalar;

const MAGIC: &str = "FEDSET";
const VERSION: &str = "v1";

pub fn dataset_to_bytes<S: Scalar>(d: &Dataset<S>) -> Result<Vec<u8>, DataError> {
    if d.num_classes() > u16::MAX as usize + 1 {
        return Err(DataError::Shape(format!(
            "{} classes do not fit u16 labels",
            d.num_classes()
        )));
    }
    let mut out = format!(
        "{MAGIC} {VERSION} {} {} {} {}\n",
        d.len(),
        d.channels(),
        d.width(),
        d.num_classes()
    )
    .into_bytes();
    out.reserve(d.features().len() * 8 + d.len() * 2);
    for &v in d.features() {
        out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    for &l in d.labels() {
        out.extend_from_slice(&(l as u16).to_le_bytes());
    }
    Ok(out)
}

pub fn dataset_from_bytes<S: Scalar>(bytes: &[u8]) -> Result<Dataset<S>, DataError> {
    let nl = bytes
        .iter()
        .take(256)
        .position(|&b| b == b'\n')
        .ok_or_else(|| DataError::MalformedHeader("no header line".into()))?;
    let header =
        std::str::from_utf8(&bytes[..nl]).map_err(|_| DataError::MalformedHeader("header is not UTF-8".into()))?;
    let toks: Vec<&str> = header.split(' ').collect();
    let [magic, version, n, c, w, k] = toks.as_slice() else {
        return Err(DataError::MalformedHeader(format!("expected 6 fields, got `{header}`")));
    };
    if *magic != MAGIC || *version != VERSION {
        return Err(DataError::MalformedHeader(format!(
            "unsupported format `{magic} {version}`"
        )));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| DataError::MalformedHeader(format!("bad integer `{s}`")))
    };
    let (n, c, w, k) = (num(n)?, num(c)?, num(w)?, num(k)?);
    if c == 0 || w == 0 || k == 0 {
        return Err(DataError::MalformedHeader(
            "channels, width and classes must be positive".into(),
        ));
    }
    let body = &bytes[nl + 1..];
    let feat_len = n
        .checked_mul(c)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| DataError::MalformedHeader("sizes overflow".into()))?;
    let expected = feat_len + n * 2;
    if body.len() < expected {
        return Err(DataError::Truncated {
            expected,
            got: body.len(),
        });
    }
    if body.len() > expected {
        return Err(DataError::TrailingBytes {
            extra: body.len() - expected,
        });
    }
    let features: Vec<S> = body[..feat_len]
        .chunks_exact(8)
        .map(|b| S::from_f64_lossy(f64::from_le_bytes(b.try_into().expect("8 bytes"))))
        .collect();
    let labels: Vec<usize> = body[feat_len..]
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]) as usize)
        .collect();
    Dataset::new(c, w, features, labels, k)
}

pub fn save_dataset<S: Scalar>(d: &Dataset<S>, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    std::fs::write(path, dataset_to_bytes(d)?).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_dataset<S: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<S>, DataError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    dataset_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset<f64> {
        Dataset::new(
            2,
            3,
            (0..24).map(|i| i as f64 * 0.1 - 1.0).collect(),
            vec![0, 2, 1, 2],
            3,
        )
        .unwrap()
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.fedset");
        save_dataset(&sample(), &p).unwrap();
        assert_eq!(load_dataset::<f64>(&p).unwrap(), sample());
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"FEDSET v1 4 2 3 3\n"));
        assert_eq!(bytes.len(), 18 + 24 * 8 + 4 * 2);
    }

    #[test]
    fn label_out_of_range_names_row() {
        let mut bytes = dataset_to_bytes(&sample()).unwrap();
        let n = bytes.len();
        bytes[n - 4] = 7; // third label
        assert!(matches!(
            dataset_from_bytes::<f64>(&bytes),
            Err(DataError::LabelOutOfRange { row: 2, label: 7, .. })
        ));
    }

    #[test]
    fn truncation_differs_from_bad_header() {
        let bytes = dataset_to_bytes(&sample()).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(
            dataset_from_bytes::<f64>(cut),
            Err(DataError::Truncated { .. })
        ));
        let mut hdr = bytes.clone();
        hdr[2] = b'Z';
        assert!(matches!(
            dataset_from_bytes::<f64>(&hdr),
            Err(DataError::MalformedHeader(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            dataset_from_bytes::<f64>(&extra),
            Err(DataError::TrailingBytes { extra: 1 })
        ));
    }
}
