//! Versioned little-endian binary containers for every pipeline artifact.
//!
//! Layout: magic `QGRM`, format version (u32), payload kind (u32), the
//! payload, then a u64 checksum equal to the wrapping sum of the payload
//! bytes. Dimensions are u64, reals are f64.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{Field2D, Grid};
use crate::fom::SnapshotSet;
use crate::gp::{Provenance, RomTrajectory};
use crate::lstm::{AdamState, Architecture, LstmModel, Scaler};
use crate::pod::PodBasis;

pub const MAGIC: &[u8; 4] = b"QGRM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 12;

/// Payload kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Kind {
    Snapshots = 1,
    Basis = 2,
    Model = 3,
    Trajectory = 4,
}

impl Kind {
    fn from_u32(v: u32) -> Option<Self> {
        match v {
            1 => Some(Kind::Snapshots),
            2 => Some(Kind::Basis),
            3 => Some(Kind::Model),
            4 => Some(Kind::Trajectory),
            _ => None,
        }
    }
}

pub fn checksum(payload: &[u8]) -> u64 {
    payload.iter().fold(0u64, |acc, &b| acc.wrapping_add(u64::from(b)))
}

#[derive(Default)]
struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        self.buf.reserve(8 * v.len());
        for x in v {
            self.f64(*x);
        }
    }

    fn grid(&mut self, g: &Grid) {
        self.usize(g.nx());
        self.usize(g.ny());
    }

    fn finish(self, kind: Kind) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.buf.len() + 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(kind as u32).to_le_bytes());
        out.extend_from_slice(&self.buf);
        out.extend_from_slice(&checksum(&self.buf).to_le_bytes());
        out
    }
}

struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
}

type DecodeResult<T> = std::result::Result<T, String>;

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> DecodeResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| format!("truncated payload at byte {}", self.pos))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> DecodeResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> DecodeResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> DecodeResult<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| format!("dimension {v} does not fit in memory"))
    }

    /// A length that must be backed by at least `elem` bytes each.
    fn len(&mut self, elem: usize) -> DecodeResult<usize> {
        let n = self.usize()?;
        if n.saturating_mul(elem) > self.data.len() - self.pos {
            return Err(format!("length {n} exceeds the remaining payload"));
        }
        Ok(n)
    }

    fn f64(&mut self) -> DecodeResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> DecodeResult<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or("length overflow")?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn grid(&mut self) -> DecodeResult<Grid> {
        let (nx, ny) = (self.usize()?, self.usize()?);
        Grid::new(nx, ny).map_err(|e| e.to_string())
    }

    fn field(&mut self, g: Grid) -> DecodeResult<Field2D> {
        let v = self.f64s(g.len())?;
        Field2D::from_values(g, v).map_err(|e| e.to_string())
    }

    fn fields(&mut self, g: Grid, n: usize) -> DecodeResult<Vec<Field2D>> {
        if n.saturating_mul(g.len()).saturating_mul(8) > self.data.len() - self.pos {
            return Err(format!("{n} fields exceed the remaining payload"));
        }
        (0..n).map(|_| self.field(g)).collect()
    }

    fn done(&self) -> DecodeResult<()> {
        if self.pos == self.data.len() {
            Ok(())
        } else {
            Err(format!("{} trailing payload bytes", self.data.len() - self.pos))
        }
    }
}

/// Checks header and checksum; returns the payload.
fn unwrap_container(bytes: &[u8], expected: Kind) -> DecodeResult<&[u8]> {
    if bytes.len() < HEADER_LEN + 8 {
        return Err("file too short for a QGRM container".into());
    }
    if &bytes[..4] != MAGIC {
        return Err("missing QGRM magic bytes".into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(format!(
            "unsupported format version {version} (this build reads version {FORMAT_VERSION})"
        ));
    }
    let kind = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    match Kind::from_u32(kind) {
        Some(k) if k == expected => {}
        Some(k) => return Err(format!("expected a {expected:?} file, found {k:?}")),
        None => return Err(format!("unknown payload kind {kind}")),
    }
    let payload = &bytes[HEADER_LEN..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
    let actual = checksum(payload);
    if stored != actual {
        return Err(format!("checksum mismatch (stored {stored:#x}, computed {actual:#x})"));
    }
    Ok(payload)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file<T>(path: &Path, kind: Kind, decode: impl FnOnce(&mut Decoder) -> DecodeResult<T>) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format_err = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let payload = unwrap_container(&bytes, kind).map_err(format_err)?;
    let mut dec = Decoder { data: payload, pos: 0 };
    let value = decode(&mut dec).map_err(format_err)?;
    dec.done().map_err(format_err)?;
    Ok(value)
}

pub fn encode_snapshots(set: &SnapshotSet) -> Vec<u8> {
    let mut e = Encoder::default();
    e.grid(&set.grid);
    e.usize(set.len());
    e.f64s(&set.times);
    for w in &set.omega {
        e.f64s(w.values());
    }
    e.f64s(set.omega_mean.values());
    e.f64s(set.psi_mean.values());
    e.finish(Kind::Snapshots)
}

fn decode_snapshots(d: &mut Decoder) -> DecodeResult<SnapshotSet> {
    let grid = d.grid()?;
    let n = d.len(8)?;
    let times = d.f64s(n)?;
    let omega = d.fields(grid, n)?;
    let omega_mean = d.field(grid)?;
    let psi_mean = d.field(grid)?;
    Ok(SnapshotSet {
        grid,
        times,
        omega,
        omega_mean,
        psi_mean,
    })
}

pub fn write_snapshots(path: &Path, set: &SnapshotSet) -> Result<()> {
    write_file(path, &encode_snapshots(set))
}

pub fn read_snapshots(path: &Path) -> Result<SnapshotSet> {
    read_file(path, Kind::Snapshots, decode_snapshots)
}

pub fn encode_basis(b: &PodBasis) -> Vec<u8> {
    let mut e = Encoder::default();
    e.grid(&b.grid);
    e.usize(b.r());
    e.usize(b.times.len());
    e.usize(b.lambdas.len());
    e.f64s(&b.lambdas);
    for f in b.phi.iter().chain(&b.theta) {
        e.f64s(f.values());
    }
    for series in &b.a_train {
        e.f64s(series);
    }
    e.f64s(&b.times);
    e.f64s(b.omega_mean.values());
    e.f64s(b.psi_mean.values());
    e.finish(Kind::Basis)
}

fn decode_basis(d: &mut Decoder) -> DecodeResult<PodBasis> {
    let grid = d.grid()?;
    let r = d.len(8)?;
    let n = d.len(8)?;
    let n_lambda = d.len(8)?;
    let lambdas = d.f64s(n_lambda)?;
    let phi = d.fields(grid, r)?;
    let theta = d.fields(grid, r)?;
    let a_train = (0..r).map(|_| d.f64s(n)).collect::<DecodeResult<_>>()?;
    let times = d.f64s(n)?;
    let omega_mean = d.field(grid)?;
    let psi_mean = d.field(grid)?;
    Ok(PodBasis {
        grid,
        lambdas,
        phi,
        theta,
        a_train,
        times,
        omega_mean,
        psi_mean,
    })
}

pub fn write_basis(path: &Path, basis: &PodBasis) -> Result<()> {
    write_file(path, &encode_basis(basis))
}

pub fn read_basis(path: &Path) -> Result<PodBasis> {
    read_file(path, Kind::Basis, decode_basis)
}

pub fn encode_model(m: &LstmModel) -> Vec<u8> {
    let mut e = Encoder::default();
    e.usize(m.arch.input);
    e.usize(m.arch.hidden);
    e.usize(m.arch.layers);
    e.usize(m.arch.output);
    e.usize(m.sigma);
    e.u64(m.seed);
    e.usize(m.params.len());
    e.f64s(&m.params);
    e.usize(m.scaler.r());
    e.f64s(&m.scaler.min);
    e.f64s(&m.scaler.max);
    e.u64(m.adam.step);
    e.f64s(&m.adam.m);
    e.f64s(&m.adam.v);
    e.finish(Kind::Model)
}

fn decode_model(d: &mut Decoder) -> DecodeResult<LstmModel> {
    let (input, hidden, layers, output) = (d.usize()?, d.usize()?, d.usize()?, d.usize()?);
    let arch = Architecture::new(input, hidden, layers, output).map_err(|e| e.to_string())?;
    let sigma = d.usize()?;
    if sigma == 0 {
        return Err("lookback window of zero".into());
    }
    let seed = d.u64()?;
    let n = d.len(8)?;
    if n != arch.n_params() {
        return Err(format!(
            "{n} parameters stored but the architecture needs {}",
            arch.n_params()
        ));
    }
    let params = d.f64s(n)?;
    let r = d.len(16)?;
    if r != input {
        return Err(format!("scaler covers {r} modes, network input is {input}"));
    }
    let scaler = Scaler {
        min: d.f64s(r)?,
        max: d.f64s(r)?,
    };
    let step = d.u64()?;
    let adam = AdamState {
        m: d.f64s(n)?,
        v: d.f64s(n)?,
        step,
    };
    Ok(LstmModel {
        arch,
        params,
        scaler,
        sigma,
        seed,
        adam,
    })
}

pub fn write_model(path: &Path, model: &LstmModel) -> Result<()> {
    write_file(path, &encode_model(model))
}

pub fn read_model(path: &Path) -> Result<LstmModel> {
    read_file(path, Kind::Model, decode_model)
}

pub fn encode_trajectory(t: &RomTrajectory) -> Vec<u8> {
    let mut e = Encoder::default();
    let (tag, sigma) = match t.provenance {
        Provenance::Gp => (0, 0),
        Provenance::Lstm { sigma } => (1, sigma),
        Provenance::TrueProjection => (2, 0),
    };
    e.u32(tag);
    e.usize(sigma);
    match t.diverged_at {
        Some(at) => {
            e.u32(1);
            e.f64(at);
        }
        None => {
            e.u32(0);
            e.f64(0.0);
        }
    }
    e.usize(t.len());
    e.usize(t.r());
    e.f64s(&t.times);
    for s in &t.states {
        e.f64s(s);
    }
    e.finish(Kind::Trajectory)
}

fn decode_trajectory(d: &mut Decoder) -> DecodeResult<RomTrajectory> {
    let tag = d.u32()?;
    let sigma = d.usize()?;
    let provenance = match tag {
        0 => Provenance::Gp,
        1 => Provenance::Lstm { sigma },
        2 => Provenance::TrueProjection,
        other => return Err(format!("unknown trajectory provenance {other}")),
    };
    let diverged = d.u32()?;
    let at = d.f64()?;
    let n = d.len(8)?;
    let r = d.usize()?;
    let times = d.f64s(n)?;
    if n.saturating_mul(r).saturating_mul(8) > d.data.len() - d.pos {
        return Err("trajectory states exceed the remaining payload".into());
    }
    let states = (0..n).map(|_| d.f64s(r)).collect::<DecodeResult<Vec<_>>>()?;
    let mut traj = RomTrajectory::new(times, states, provenance).map_err(|e| e.to_string())?;
    traj.diverged_at = match diverged {
        0 => None,
        1 => Some(at),
        other => return Err(format!("bad divergence flag {other}")),
    };
    Ok(traj)
}

pub fn write_trajectory(path: &Path, traj: &RomTrajectory) -> Result<()> {
    write_file(path, &encode_trajectory(traj))
}

pub fn read_trajectory(path: &Path) -> Result<RomTrajectory> {
    read_file(path, Kind::Trajectory, decode_trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn snapshots() -> SnapshotSet {
        let g = Grid::new(9, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let omega = (0..4)
            .map(|_| Field2D::from_fn_dirichlet(g, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        SnapshotSet::new(g, vec![0.0, 0.1, 0.2, 0.3], omega).unwrap()
    }

    fn decode<T>(bytes: &[u8], kind: Kind, f: impl FnOnce(&mut Decoder) -> DecodeResult<T>) -> DecodeResult<T> {
        let payload = unwrap_container(bytes, kind)?;
        let mut d = Decoder { data: payload, pos: 0 };
        let v = f(&mut d)?;
        d.done()?;
        Ok(v)
    }

    #[test]
    fn snapshot_round_trip_and_corruption() {
        let set = snapshots();
        let bytes = encode_snapshots(&set);
        assert_eq!(&bytes[..4], MAGIC);
        let back = decode(&bytes, Kind::Snapshots, decode_snapshots).unwrap();
        assert_eq!(encode_snapshots(&back), bytes);
        assert_eq!(back.times, set.times);
        for (a, b) in back.omega.iter().zip(&set.omega) {
            assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        for pos in [HEADER_LEN, HEADER_LEN + 17, bytes.len() - 9] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x40;
            let err = decode(&bad, Kind::Snapshots, decode_snapshots).unwrap_err();
            assert!(err.contains("checksum"), "{err}");
        }

        let mut old = bytes.clone();
        old[4] = 9;
        assert!(decode(&old, Kind::Snapshots, decode_snapshots).unwrap_err().contains("version"));
        assert!(decode(&bytes, Kind::Basis, decode_basis).unwrap_err().contains("expected"));
        assert!(decode(&bytes[..10], Kind::Snapshots, decode_snapshots).is_err());
    }

    #[test]
    fn basis_model_trajectory_round_trip() {
        let basis = PodBasis::from_snapshots(&snapshots(), 2).unwrap();
        let bytes = encode_basis(&basis);
        let back = decode(&bytes, Kind::Basis, decode_basis).unwrap();
        assert_eq!(back, basis);
        assert_eq!(encode_basis(&back), bytes);

        let series: Vec<Vec<f64>> = (0..20).map(|t| vec![(t as f64).sin(), (t as f64 * 0.3).cos()]).collect();
        let cfg = crate::lstm::TrainConfig {
            epochs: 2,
            hidden: 3,
            layers: 2,
            ..Default::default()
        };
        let (model, _) = crate::lstm::train(&series, 2, &cfg).unwrap();
        let bytes = encode_model(&model);
        let back = decode(&bytes, Kind::Model, decode_model).unwrap();
        assert_eq!(back, model);
        assert_eq!(encode_model(&back), bytes);

        let mut traj = RomTrajectory::new(
            vec![0.0, 0.5, 1.0],
            vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, -6.0]],
            Provenance::Lstm { sigma: 3 },
        )
        .unwrap();
        traj.diverged_at = Some(1.25);
        let bytes = encode_trajectory(&traj);
        assert_eq!(decode(&bytes, Kind::Trajectory, decode_trajectory).unwrap(), traj);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/snaps.qgrm");
        let set = snapshots();
        write_snapshots(&path, &set).unwrap();
        let back = read_snapshots(&path).unwrap();
        assert_eq!(encode_snapshots(&back), encode_snapshots(&set));
        assert!(matches!(
            read_snapshots(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
        assert!(matches!(read_basis(&path), Err(Error::Format { .. })));
    }
}
