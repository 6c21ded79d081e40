use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HMEB";
const VERSION: u32 = 1;

/// On-disk embedding layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingFormat {
    /// `N d` header followed by `node_id v1 ... vd` lines.
    TextWord2vec,
    /// `HMEB`, u32 version, u64 rows, u32 cols, then row-major little-endian f32.
    Binary,
}

impl std::str::FromStr for EmbeddingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "text-word2vec" | "text_word2vec" => Ok(EmbeddingFormat::TextWord2vec),
            "binary" | "bin" => Ok(EmbeddingFormat::Binary),
            other => Err(Error::Config(format!("unknown embedding format `{other}`"))),
        }
    }
}

/// Dense `|V| x d` matrix of node vectors, row order = global node id.
///
/// Held as f64 in memory; written as f32.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    data: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("embedding contains non-finite entries".into()));
        }
        Ok(EmbeddingMatrix { data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingMatrix {
            data: Array2::zeros((rows, dim)),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, u: usize) -> ArrayView1<'_, f64> {
        self.data.row(u)
    }

    pub fn view(&self) -> ndarray::ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    /// Rounds every entry through f32, which is what a save/load cycle does.
    pub fn to_f32_precision(&self) -> Self {
        EmbeddingMatrix {
            data: self.data.mapv(|x| x as f32 as f64),
        }
    }

    pub fn save(&self, path: &Path, format: EmbeddingFormat, ids: Option<&[String]>) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        match format {
            EmbeddingFormat::Binary => self.write_binary(&mut w),
            EmbeddingFormat::TextWord2vec => self.write_text(&mut w, ids),
        }
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
    }

    pub fn write_binary(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(self.rows() as u64)?;
        w.write_u32::<LittleEndian>(self.dim() as u32)?;
        for &x in self.data.iter() {
            w.write_f32::<LittleEndian>(x as f32)?;
        }
        Ok(())
    }

    pub fn write_text(&self, w: &mut impl Write, ids: Option<&[String]>) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.rows(), self.dim())?;
        for (u, row) in self.data.rows().into_iter().enumerate() {
            match ids {
                Some(ids) => write!(w, "{}", ids[u])?,
                None => write!(w, "{u}")?,
            }
            for &x in row {
                write!(w, " {}", x as f32)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads a binary matrix; `expect_dim` rejects files of another width.
    pub fn load_binary(path: &Path, expect_dim: Option<usize>) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_binary(&mut BufReader::new(f), expect_dim)
    }

    pub fn read_binary(r: &mut impl Read, expect_dim: Option<usize>) -> Result<Self> {
        let trunc = |_| Error::Format("truncated embedding file".into());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(trunc)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an HMEB embedding file".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(trunc)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported HMEB version {version}")));
        }
        let rows = r.read_u64::<LittleEndian>().map_err(trunc)? as usize;
        let dim = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        if let Some(d) = expect_dim {
            if d != dim {
                return Err(Error::shape(format!("dimension {d}"), format!("dimension {dim}")));
            }
        }
        let mut buf = vec![0f32; rows * dim];
        r.read_f32_into::<LittleEndian>(&mut buf).map_err(trunc)?;
        let data = Array2::from_shape_vec((rows, dim), buf.into_iter().map(f64::from).collect())
            .expect("shape matches buffer");
        EmbeddingMatrix::new(data)
    }

    /// Reads a word2vec text file, returning row ids in file order.
    pub fn load_text(path: &Path, expect_dim: Option<usize>) -> Result<(Vec<String>, Self)> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty embedding file".into()))?
            .map_err(|e| Error::io(path, e))?;
        let mut hp = header.split_whitespace().map(str::parse::<usize>);
        let (Some(Ok(rows)), Some(Ok(dim)), None) = (hp.next(), hp.next(), hp.next()) else {
            return Err(perr(1, "expected `N d` header".into()));
        };
        if let Some(d) = expect_dim {
            if d != dim {
                return Err(Error::shape(format!("dimension {d}"), format!("dimension {dim}")));
            }
        }
        let mut ids = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows * dim);
        for i in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("truncated embedding file: {i} of {rows} rows")))?
                .map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let id = parts.next().ok_or_else(|| perr(i + 2, "empty row".into()))?;
            let before = data.len();
            for p in parts {
                data.push(p.parse::<f32>().map_err(|_| perr(i + 2, format!("bad value `{p}`")))? as f64);
            }
            if data.len() - before != dim {
                return Err(perr(
                    i + 2,
                    format!("expected {dim} values, found {}", data.len() - before),
                ));
            }
            ids.push(id.to_string());
        }
        let data = Array2::from_shape_vec((rows, dim), data).expect("shape matches buffer");
        Ok((ids, EmbeddingMatrix::new(data)?))
    }

    /// Loads either layout, sniffing the magic bytes.
    pub fn load_any(path: &Path, expect_dim: Option<usize>) -> Result<(Option<Vec<String>>, Self)> {
        let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut magic = [0u8; 4];
        let is_bin = f.read_exact(&mut magic).is_ok() && &magic == MAGIC;
        if is_bin {
            Ok((None, Self::load_binary(path, expect_dim)?))
        } else {
            let (ids, m) = Self::load_text(path, expect_dim)?;
            Ok((Some(ids), m))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let m = EmbeddingMatrix::new(array![
            [0.1f32 as f64, -2.5, 3.0, 1e-7f32 as f64],
            [4.0, 5.5, -6.25, 7.0],
            [f32::MAX as f64, 0.0, -0.0, 1.0]
        ])
        .unwrap();
        let mut buf = Vec::new();
        m.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"HMEB");
        assert_eq!(buf.len(), 4 + 4 + 8 + 4 + 12 * 4);
        let back = EmbeddingMatrix::read_binary(&mut buf.as_slice(), Some(4)).unwrap();
        for (a, b) in m.as_array().iter().zip(back.as_array()) {
            assert_eq!((*a as f32).to_bits(), (*b as f32).to_bits());
        }
    }

    #[test]
    fn truncated_and_mismatched_binary_rejected() {
        let m = EmbeddingMatrix::zeros(3, 4);
        let mut buf = Vec::new();
        m.write_binary(&mut buf).unwrap();
        assert!(matches!(
            EmbeddingMatrix::read_binary(&mut &buf[..buf.len() - 1], None),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            EmbeddingMatrix::read_binary(&mut buf.as_slice(), Some(5)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn text_header_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        let m = EmbeddingMatrix::new(Array2::from_shape_fn((100, 128), |(i, j)| (i as f64 - j as f64) / 7.0)).unwrap();
        m.save(&p, EmbeddingFormat::TextWord2vec, None).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "100 128");
        let (ids, back) = EmbeddingMatrix::load_text(&p, Some(128)).unwrap();
        assert_eq!(ids[3], "3");
        for (a, b) in m.as_array().iter().zip(back.as_array()) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
    }

    #[test]
    fn text_with_wrong_column_count_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.txt");
        std::fs::write(&p, "2 3\na 1 2 3\nb 1 2\n").unwrap();
        assert!(matches!(EmbeddingMatrix::load_text(&p, None), Err(Error::Parse { .. })));
        std::fs::write(&p, "3 3\na 1 2 3\n").unwrap();
        assert!(matches!(EmbeddingMatrix::load_text(&p, None), Err(Error::Format(_))));
    }
}
