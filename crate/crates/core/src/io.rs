//! File formats: binary weight records, resumable HMC checkpoints and CSV tables.
//!
//! Weight record layout (all integers and reals little-endian):
//!
//! ```text
//! magic      8 bytes  "BPDEWTS1"
//! n_inputs   u32
//! n_layers   u32
//! n_units    u32
//! bias       u32      0 or 1
//! count      u64      number of weight vectors
//! n_params   u64
//! values     count × n_params f64
//! ```
//!
//! A checkpoint is `"BPDECKP1"`, a u64 header length, a JSON header and then a
//! weight record holding the post-burn-in samples.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Domain, MeasurementDataset};
use crate::error::{Error, Result};
use crate::hmc::{ChainState, HmcConfig};
use crate::net::{Activation, Architecture, Scaling, WeightVector};
use crate::pde::GridSolution;

const WEIGHTS_MAGIC: &[u8; 8] = b"BPDEWTS1";
const CHECKPOINT_MAGIC: &[u8; 8] = b"BPDECKP1";

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn write_record<W: Write>(out: &mut W, weights: &[WeightVector], arch: Architecture) -> std::io::Result<()> {
    out.write_all(WEIGHTS_MAGIC)?;
    for v in [arch.n_inputs, arch.n_layers, arch.n_units, arch.bias as usize] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    out.write_all(&(weights.len() as u64).to_le_bytes())?;
    out.write_all(&(arch.n_params() as u64).to_le_bytes())?;
    for w in weights {
        for v in w.values() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R, path: &Path) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(path, "file is truncated"),
        _ => Error::io(path, e),
    })?;
    Ok(buf)
}

fn read_record<R: Read>(r: &mut R, path: &Path) -> Result<Vec<WeightVector>> {
    if &read_exact::<_, 8>(r, path)? != WEIGHTS_MAGIC {
        return Err(Error::format(path, "not a weight record (bad magic)"));
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = u32::from_le_bytes(read_exact(r, path)?) as usize;
    }
    let count = u64::from_le_bytes(read_exact(r, path)?) as usize;
    let n_params = u64::from_le_bytes(read_exact(r, path)?) as usize;
    let arch = Architecture {
        n_inputs: dims[0],
        n_layers: dims[1],
        n_units: dims[2],
        activation: Activation::Tanh,
        bias: match dims[3] {
            0 => false,
            1 => true,
            b => return Err(Error::format(path, format!("bad bias flag {b}"))),
        },
    };
    arch.validate().map_err(|e| Error::format(path, e.to_string()))?;
    if arch.n_params() != n_params {
        return Err(Error::format(
            path,
            format!("architecture needs {} parameters, record stores {n_params}", arch.n_params()),
        ));
    }
    let mut out = Vec::with_capacity(count);
    let mut bytes = vec![0u8; n_params * 8];
    for _ in 0..count {
        r.read_exact(&mut bytes).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::format(path, "file is truncated"),
            _ => Error::io(path, e),
        })?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push(WeightVector::new(arch, values).map_err(|e| Error::format(path, e.to_string()))?);
    }
    Ok(out)
}

/// Write one or more weight vectors sharing an architecture.
pub fn write_weights(path: &Path, weights: &[WeightVector]) -> Result<()> {
    let arch = weights
        .first()
        .map(|w| w.arch())
        .ok_or_else(|| Error::Domain("no weight vectors to write".into()))?;
    if weights.iter().any(|w| w.arch() != arch) {
        return Err(Error::Dimension("weight vectors have different architectures".into()));
    }
    let mut f = create(path)?;
    write_record(&mut f, weights, arch).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<Vec<WeightVector>> {
    read_record(&mut open(path)?, path)
}

/// One weight vector per CSV row, no header.
pub fn write_weights_csv(path: &Path, weights: &[WeightVector]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    for v in weights {
        w.write_record(v.values().iter().map(|x| format!("{x:e}")))
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: Architecture,
    pub config: HmcConfig,
    pub state: ChainState,
    /// Current chain position (needed to resume).
    pub position: Vec<f64>,
    pub scaling: Scaling,
    pub sigma: f64,
    pub acceptance_rate: f64,
    pub low_acceptance: bool,
    #[serde(default)]
    pub config_hash: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub samples: Vec<WeightVector>,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let header = serde_json::to_vec(&ckpt.header).map_err(|e| Error::format(path, e.to_string()))?;
    let mut f = create(path)?;
    let io = |e| Error::io(path, e);
    f.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    f.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    f.write_all(&header).map_err(io)?;
    write_record(&mut f, &ckpt.samples, ckpt.header.arch).map_err(io)?;
    f.flush().map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = open(path)?;
    if &read_exact::<_, 8>(&mut r, path)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a chain checkpoint (bad magic)"));
    }
    let len = u64::from_le_bytes(read_exact(&mut r, path)?) as usize;
    if len > 1 << 30 {
        return Err(Error::format(path, "implausible header length"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    let mut header: CheckpointHeader =
        serde_json::from_slice(&buf).map_err(|e| Error::format(path, e.to_string()))?;
    header.state.position = header.position.clone();
    let samples = if len > 0 { read_record(&mut r, path)? } else { Vec::new() };
    if samples.iter().any(|s| s.arch() != header.arch) {
        return Err(Error::format(path, "sample architecture differs from header"));
    }
    Ok(Checkpoint { header, samples })
}

/// `t,x,y` CSV.
pub fn write_dataset_csv(path: &Path, data: &MeasurementDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["t", "x", "y"]).map_err(err)?;
    for (p, y) in data.inputs().outer_iter().zip(data.targets().iter()) {
        w.write_record([format!("{:e}", p[0]), format!("{:e}", p[1]), format!("{y:e}")])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset_csv(path: &Path, domain: Domain) -> Result<MeasurementDataset> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let headers = r.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::format(path, format!("missing column '{name}'")))
    };
    let (it, ix, iy) = (col("t")?, col("x")?, col("y")?);
    let mut pts = Vec::new();
    let mut ys = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let get = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::format(path, format!("row {}: bad number", line + 2)))
        };
        pts.push((get(it)?, get(ix)?));
        ys.push(get(iy)?);
    }
    MeasurementDataset::from_points(&pts, ys, domain).map_err(|e| Error::format(path, e.to_string()))
}

/// Long-format `t,x,u` dump of a grid solution.
pub fn write_solution_csv(path: &Path, sol: &GridSolution) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["t", "x", "u"]).map_err(err)?;
    for (i, t) in sol.t.iter().enumerate() {
        for (j, x) in sol.x.iter().enumerate() {
            w.write_record([format!("{t:e}"), format!("{x:e}"), format!("{:e}", sol.values[[i, j]])])
                .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_loss_trace(path: &Path, trace: &[(usize, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["iteration", "mse"]).map_err(err)?;
    for (i, v) in trace {
        w.write_record([i.to_string(), format!("{v:e}")]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::format(path, e.to_string()))?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

/// `n × 2` points matrix from a `t,x` CSV (extra columns ignored).
pub fn read_points_csv(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let t: f64 = rec.get(0).and_then(|s| s.trim().parse().ok()).ok_or_else(|| Error::format(path, "bad t"))?;
        let x: f64 = rec.get(1).and_then(|s| s.trim().parse().ok()).ok_or_else(|| Error::format(path, "bad x"))?;
        rows.push((t, x));
    }
    Ok(crate::data::points_matrix(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights(n: usize) -> Vec<WeightVector> {
        let arch = Architecture::new(2, 3, true).unwrap();
        (0..n)
            .map(|k| {
                WeightVector::new(arch, (0..arch.n_params()).map(|i| (i * 7 + k) as f64 * 0.013 - 0.2).collect())
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn weight_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        let ws = weights(3);
        write_weights(&p, &ws).unwrap();
        assert_eq!(read_weights(&p).unwrap(), ws);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        write_weights(&p, &weights(2)).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_weights(&p), Err(Error::Format { .. })));
        std::fs::write(&p, b"NOTMAGIC and more").unwrap();
        assert!(matches!(read_weights(&p), Err(Error::Format { .. })));
        assert!(matches!(read_weights(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        let ws = weights(4);
        let ck = Checkpoint {
            header: CheckpointHeader {
                arch: ws[0].arch(),
                config: HmcConfig::default(),
                state: ChainState {
                    iteration: 10,
                    accepted: 7,
                    divergences: 1,
                    rng_word_pos: 12345,
                    position: ws[1].values().to_vec(),
                },
                position: ws[1].values().to_vec(),
                scaling: Scaling::identity(),
                sigma: 0.01,
                acceptance_rate: 0.7,
                low_acceptance: false,
                config_hash: Some("abc".into()),
            },
            samples: ws.clone(),
        };
        write_checkpoint(&p, &ck).unwrap();
        let back = read_checkpoint(&p).unwrap();
        assert_eq!(back.samples, ws);
        assert_eq!(back.header, ck.header);
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let dom = Domain::new(0.0, 1.0, -1.0, 1.0).unwrap();
        let d = MeasurementDataset::from_points(&[(0.1, 0.2), (0.5, -0.3)], vec![1.5, -2.25e-7], dom).unwrap();
        write_dataset_csv(&p, &d).unwrap();
        let back = read_dataset_csv(&p, dom).unwrap();
        assert_eq!(back.inputs(), d.inputs());
        assert_eq!(back.targets(), d.targets());
    }
}
