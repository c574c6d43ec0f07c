//! Self-describing binary suite files.
//!
//! Layout (all integers little-endian, all reals IEEE-754 binary64 bits):
//! an 8-byte magic `FSUITE01`, a kind byte, client count and dimension,
//! the optional known-constants block, then the kind-specific payload.
//! Floats round-trip bit-exactly, so a reloaded suite replays a run
//! byte-for-byte.

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::problems::{
    ClientObjective, KnownConstants, LabeledDataset, LogRegClient, ProblemSuite, QuadraticClient,
};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"FSUITE01";
const KIND_QUADRATIC: u8 = 0;
const KIND_LOGREG: u8 = 1;

fn w_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_f64s(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    for &v in vs {
        w_f64(w, v)?;
    }
    Ok(())
}

fn r_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn r_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn r_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn r_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(r_f64(r)?);
    }
    Ok(out)
}

fn w_opt_f64(w: &mut impl Write, v: Option<f64>) -> Result<()> {
    match v {
        Some(v) => {
            w.write_all(&[1])?;
            w_f64(w, v)
        }
        None => {
            w.write_all(&[0])?;
            Ok(())
        }
    }
}

fn r_opt_f64(r: &mut impl Read) -> Result<Option<f64>> {
    match r_u8(r)? {
        0 => Ok(None),
        1 => Ok(Some(r_f64(r)?)),
        k => Err(Error::MalformedSuite(format!("bad option tag {k}"))),
    }
}

fn write_dataset(w: &mut impl Write, d: &LabeledDataset) -> Result<()> {
    w_u32(w, d.len() as u32)?;
    w_u32(w, d.n_features as u32)?;
    w_u32(w, d.n_classes as u32)?;
    w_f64s(w, &d.features)?;
    for &l in &d.labels {
        w_u32(w, l as u32)?;
    }
    Ok(())
}

fn read_dataset(r: &mut impl Read) -> Result<LabeledDataset> {
    let n = r_u32(r)? as usize;
    let n_features = r_u32(r)? as usize;
    let n_classes = r_u32(r)? as usize;
    let features = r_f64s(r, n * n_features)?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(r_u32(r)? as usize);
    }
    let d = LabeledDataset { n_features, n_classes, features, labels };
    d.validate()?;
    Ok(d)
}

/// Serialize a suite to a writer.
pub fn write_suite(w: &mut impl Write, suite: &ProblemSuite) -> Result<()> {
    w.write_all(MAGIC)?;
    let kind = match suite.client(0) {
        ClientObjective::Quadratic(_) => KIND_QUADRATIC,
        ClientObjective::LogReg(_) => KIND_LOGREG,
    };
    w.write_all(&[kind])?;
    w_u32(w, suite.n_clients() as u32)?;
    w_u32(w, suite.dim() as u32)?;

    match &suite.known {
        Some(k) => {
            w.write_all(&[1])?;
            w_f64(w, k.mu)?;
            w_f64(w, k.l)?;
            match &k.x_star {
                Some(xs) => {
                    w.write_all(&[1])?;
                    w_f64s(w, xs.as_slice())?;
                }
                None => w.write_all(&[0])?,
            }
            w_opt_f64(w, k.f_star)?;
            w_opt_f64(w, k.sigma_g)?;
            w_opt_f64(w, k.sigma_l)?;
        }
        None => w.write_all(&[0])?,
    }

    match suite.client(0) {
        ClientObjective::Quadratic(_) => {
            for c in suite.clients() {
                let ClientObjective::Quadratic(qc) = c else { unreachable!() };
                w_f64s(w, qc.a())?;
                w_f64s(w, qc.b())?;
                w_f64(w, qc.noise_std())?;
            }
        }
        ClientObjective::LogReg(_) => {
            let ClientObjective::LogReg(first) = suite.client(0) else { unreachable!() };
            w_f64(w, first.l2_reg())?;
            for c in suite.clients() {
                let ClientObjective::LogReg(lc) = c else { unreachable!() };
                write_dataset(w, lc.data())?;
            }
        }
    }

    match &suite.test_set {
        Some(t) => {
            w.write_all(&[1])?;
            write_dataset(w, t)?;
        }
        None => w.write_all(&[0])?,
    }
    Ok(())
}

/// Deserialize a suite from a reader.
pub fn read_suite(r: &mut impl Read) -> Result<ProblemSuite> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::MalformedSuite("bad magic header".into()));
    }
    let kind = r_u8(r)?;
    let n_clients = r_u32(r)? as usize;
    let dim = r_u32(r)? as usize;
    if n_clients == 0 || dim == 0 {
        return Err(Error::MalformedSuite("empty suite".into()));
    }

    let known = match r_u8(r)? {
        0 => None,
        1 => {
            let mu = r_f64(r)?;
            let l = r_f64(r)?;
            let x_star = match r_u8(r)? {
                0 => None,
                1 => Some(ModelParams::from_vec(r_f64s(r, dim)?)),
                k => return Err(Error::MalformedSuite(format!("bad option tag {k}"))),
            };
            let f_star = r_opt_f64(r)?;
            let sigma_g = r_opt_f64(r)?;
            let sigma_l = r_opt_f64(r)?;
            Some(KnownConstants { mu, l, x_star, f_star, sigma_g, sigma_l })
        }
        k => return Err(Error::MalformedSuite(format!("bad known-constants tag {k}"))),
    };

    let clients = match kind {
        KIND_QUADRATIC => {
            let mut clients = Vec::with_capacity(n_clients);
            for _ in 0..n_clients {
                let a = r_f64s(r, dim * dim)?;
                let b = r_f64s(r, dim)?;
                let noise_std = r_f64(r)?;
                clients.push(ClientObjective::Quadratic(
                    QuadraticClient::new(a, b, noise_std)
                        .map_err(|e| Error::MalformedSuite(e.to_string()))?,
                ));
            }
            clients
        }
        KIND_LOGREG => {
            let l2_reg = r_f64(r)?;
            let mut clients = Vec::with_capacity(n_clients);
            for _ in 0..n_clients {
                let data = read_dataset(r)?;
                clients.push(ClientObjective::LogReg(
                    LogRegClient::new(data, l2_reg)
                        .map_err(|e| Error::MalformedSuite(e.to_string()))?,
                ));
            }
            clients
        }
        k => return Err(Error::MalformedSuite(format!("unknown suite kind {k}"))),
    };

    let test_set = match r_u8(r)? {
        0 => None,
        1 => Some(read_dataset(r)?),
        k => return Err(Error::MalformedSuite(format!("bad test-set tag {k}"))),
    };

    let suite = ProblemSuite::new(clients, known, test_set)?;
    if suite.dim() != dim {
        return Err(Error::MalformedSuite(format!(
            "header dimension {} disagrees with payload dimension {}",
            dim,
            suite.dim()
        )));
    }
    Ok(suite)
}

pub fn save_suite(path: &Path, suite: &ProblemSuite) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_suite(&mut f, suite)?;
    f.flush()?;
    Ok(())
}

pub fn load_suite(path: &Path) -> Result<ProblemSuite> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_suite(&mut f)
}
