//! Binary model checkpoint.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "SUSTLSTM"
//! version      u32      = 1
//! input_dim    u32
//! hidden_dim   u32
//! seed         u64
//! hyperparams  u64 epochs, then f64 dropout_rate, learning_rate,
//!              beta1, beta2, epsilon, clip_norm
//! tensors      6 × (u32 rows, u32 cols, rows·cols f64 row-major):
//!              lstm weights, lstm bias, dense weights, dense bias,
//!              normalization mean, normalization std
//! ```
//!
//! Floats are stored as raw IEEE-754 bits, so a round trip is bit-exact.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::lstm::{ForecastModel, Hyperparams, LstmParams, Normalization};
use super::ForecastError;

pub const MAGIC: &[u8; 8] = b"SUSTLSTM";
pub const VERSION: u32 = 1;

fn put_tensor<W: Write>(w: &mut W, rows: usize, cols: usize, data: &[f64]) -> io::Result<()> {
    w.write_all(&(rows as u32).to_le_bytes())?;
    w.write_all(&(cols as u32).to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(m: &ForecastModel, mut w: W) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(m.input_dim() as u32).to_le_bytes())?;
    w.write_all(&(m.hidden_dim() as u32).to_le_bytes())?;
    w.write_all(&m.seed.to_le_bytes())?;
    let hp = &m.hyperparams;
    w.write_all(&(hp.epochs as u64).to_le_bytes())?;
    for v in [hp.dropout_rate, hp.learning_rate, hp.beta1, hp.beta2, hp.epsilon, hp.clip_norm] {
        w.write_all(&v.to_le_bytes())?;
    }
    let [lw, lb, dw, db] = m.tensors();
    put_tensor(&mut w, m.lstm.weights.nrows(), m.lstm.weights.ncols(), lw)?;
    put_tensor(&mut w, lb.len(), 1, lb)?;
    put_tensor(&mut w, m.dense_weights.nrows(), m.dense_weights.ncols(), dw)?;
    put_tensor(&mut w, db.len(), 1, db)?;
    put_tensor(&mut w, m.normalization.mean.len(), 1, &m.normalization.mean)?;
    put_tensor(&mut w, m.normalization.std.len(), 1, &m.normalization.std)?;
    w.flush()
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ForecastError> {
        if self.buf.len() - self.pos < n {
            return Err(ForecastError::Checkpoint(format!("truncated while reading {what}")));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ForecastError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ForecastError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, ForecastError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn tensor(&mut self, what: &str, rows: usize, cols: usize) -> Result<Vec<f64>, ForecastError> {
        let (r, c) = (self.u32(what)? as usize, self.u32(what)? as usize);
        if (r, c) != (rows, cols) {
            return Err(ForecastError::Checkpoint(format!(
                "{what}: expected shape {rows}x{cols}, found {r}x{c}"
            )));
        }
        (0..r * c).map(|_| self.f64(what)).collect()
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ForecastModel, ForecastError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| ForecastError::Checkpoint(e.to_string()))?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(ForecastError::Checkpoint("not a model checkpoint (bad magic)".into()));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(ForecastError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let input = cur.u32("input_dim")? as usize;
    let hidden = cur.u32("hidden_dim")? as usize;
    let seed = cur.u64("seed")?;
    let epochs = cur.u64("epochs")? as usize;
    let mut hp_vals = [0.0; 6];
    for v in hp_vals.iter_mut() {
        *v = cur.f64("hyperparams")?;
    }
    let hyperparams = Hyperparams {
        hidden_dim: hidden,
        dropout_rate: hp_vals[0],
        epochs,
        learning_rate: hp_vals[1],
        beta1: hp_vals[2],
        beta2: hp_vals[3],
        epsilon: hp_vals[4],
        clip_norm: hp_vals[5],
    };
    let shape_err = |e: ndarray::ShapeError| ForecastError::Checkpoint(e.to_string());
    let lw = cur.tensor("lstm weights", 4 * hidden, input + hidden)?;
    let lb = cur.tensor("lstm bias", 4 * hidden, 1)?;
    let dw = cur.tensor("dense weights", 2, hidden)?;
    let db = cur.tensor("dense bias", 2, 1)?;
    let mean = cur.tensor("normalization mean", input, 1)?;
    let std = cur.tensor("normalization std", input, 1)?;
    if cur.pos != buf.len() {
        return Err(ForecastError::Checkpoint(format!("{} trailing bytes", buf.len() - cur.pos)));
    }
    let model = ForecastModel {
        lstm: LstmParams {
            weights: Array2::from_shape_vec((4 * hidden, input + hidden), lw).map_err(shape_err)?,
            bias: Array1::from(lb),
        },
        dense_weights: Array2::from_shape_vec((2, hidden), dw).map_err(shape_err)?,
        dense_bias: Array1::from(db),
        normalization: Normalization { mean, std },
        hyperparams,
        seed,
    };
    if !model.is_finite() {
        return Err(ForecastError::NonFinite("checkpoint parameters"));
    }
    Ok(model)
}

pub fn save_checkpoint(m: &ForecastModel, path: &Path) -> Result<(), ForecastError> {
    let mut buf = Vec::new();
    write_checkpoint(m, &mut buf).map_err(|e| ForecastError::Checkpoint(e.to_string()))?;
    fs::write(path, buf).map_err(|e| ForecastError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<ForecastModel, ForecastError> {
    let file = fs::File::open(path).map_err(|e| ForecastError::Checkpoint(format!("{}: {e}", path.display())))?;
    read_checkpoint(io::BufReader::new(file))
}
