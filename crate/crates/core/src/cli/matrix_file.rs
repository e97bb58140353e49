//! `{"name": str, "rows": int, "cols": int, "data": [real, ...]}`, row-major,
//! every value written with 17 significant digits so files round-trip
//! bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::CliError;
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub name: String,
    pub matrix: DenseMatrix,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// `{:.16e}`: one digit before the point and sixteen after.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl MatrixFile {
    pub fn new(name: impl Into<String>, matrix: DenseMatrix) -> Self {
        Self {
            name: name.into(),
            matrix,
        }
    }

    pub fn to_json(&self) -> String {
        let m = &self.matrix;
        let mut out = String::new();
        let name = serde_json::to_string(&self.name).expect("strings always serialize");
        let _ = write!(
            out,
            "{{\n  \"name\": {name},\n  \"rows\": {},\n  \"cols\": {},\n  \"data\": [",
            m.rows(),
            m.cols()
        );
        for (idx, x) in m.data().iter().enumerate() {
            if idx > 0 {
                out.push(',');
            }
            if idx % m.cols() == 0 {
                out.push_str("\n    ");
            } else {
                out.push(' ');
            }
            out.push_str(&format_f64(*x));
        }
        out.push_str("\n  ]\n}\n");
        out
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let raw: Raw =
            serde_json::from_str(text).map_err(|e| CliError::Usage(format!("matrix file: {e}")))?;
        let matrix = DenseMatrix::new(raw.rows, raw.cols, raw.data)?;
        Ok(Self {
            name: raw.name,
            matrix,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_json()).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Usage(msg) => CliError::Usage(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_stable() {
        let m = DenseMatrix::from_rows(&[[1.0, -0.5], [0.1, 3e-300]]).unwrap();
        let text = MatrixFile::new("W_q_0", m).to_json();
        assert_eq!(
            text,
            "{\n  \"name\": \"W_q_0\",\n  \"rows\": 2,\n  \"cols\": 2,\n  \"data\": [\n    \
             1.0000000000000000e0, -5.0000000000000000e-1,\n    \
             1.0000000000000001e-1, 3.0000000000000002e-300\n  ]\n}\n"
        );
    }

    #[test]
    fn rejects_inconsistent_files() {
        let bad = [
            r#"{"name": "x", "rows": 2, "cols": 2, "data": [1, 2, 3]}"#,
            r#"{"name": "x", "rows": 0, "cols": 2, "data": []}"#,
            r#"{"name": "x", "rows": 1, "cols": 1}"#,
        ];
        for text in bad {
            assert_eq!(MatrixFile::from_json(text).unwrap_err().exit_code(), 2);
        }
    }

    proptest! {
        #[test]
        fn round_trips_bit_exactly(
            data in proptest::collection::vec(
                prop_oneof![any::<f64>().prop_filter("finite", |x| x.is_finite()), -1e3f64..1e3],
                1..24,
            )
        ) {
            let m = DenseMatrix::new(1, data.len(), data).unwrap();
            let file = MatrixFile::new("m", m.clone());
            let back = MatrixFile::from_json(&file.to_json()).unwrap();
            prop_assert_eq!(back.name, "m");
            for (x, y) in m.data().iter().zip(back.matrix.data()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
