//! Binary snapshots: a little-endian `u32` header length, a JSON header, then
//! raw little-endian `f64` values (complex data interleaved re/im).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabor::{Lattice, PhaseSpaceGrid, PhaseSpaceSpectrum};
use crate::grid::Grid;
use crate::scalar::{cx, Cx, Real};

pub const FIELD_FORMAT: &str = "trapwave-field/1";
pub const SPECTRUM_FORMAT: &str = "trapwave-spectrum/1";

/// Largest accepted JSON header.
const MAX_HEADER: u32 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldHeader {
    pub format: String,
    pub quantity: String,
    pub grid: Grid<f64>,
    pub time: f64,
    pub step: usize,
    pub complex: bool,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl FieldHeader {
    pub fn new<T: Real>(quantity: &str, grid: &Grid<T>, time: T, step: usize, complex: bool) -> Self {
        Self {
            format: FIELD_FORMAT.into(),
            quantity: quantity.into(),
            grid: Grid { dim: grid.dim, extent: grid.extent.as_f64(), points: grid.points },
            time: time.as_f64(),
            step,
            complex,
            meta: serde_json::Value::Null,
        }
    }

    fn values_expected(&self) -> usize {
        self.grid.points.pow(self.grid.dim as u32) * if self.complex { 2 } else { 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub header: FieldHeader,
    pub values: Vec<f64>,
}

impl FieldSnapshot {
    /// Values as complex numbers; real snapshots get zero imaginary parts.
    pub fn complex(&self) -> Vec<Cx<f64>> {
        if self.header.complex {
            self.values.chunks_exact(2).map(|c| cx(c[0], c[1])).collect()
        } else {
            self.values.iter().map(|&v| cx(v, 0.0)).collect()
        }
    }
}

/// `<quantity>_<step>.fld`
pub fn snapshot_name(quantity: &str, step: usize) -> String {
    format!("{quantity}_{step:06}.fld")
}

fn write_blob<H: Serialize>(path: &Path, header: &H, values: impl Iterator<Item = f64>) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("header too large".into()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_blob<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(Error::Format(format!("header length {len} exceeds limit")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header = serde_json::from_slice(&json)?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() % 8 != 0 {
        return Err(Error::Format("payload is not a whole number of f64 values".into()));
    }
    let values = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))).collect();
    Ok((header, values))
}

pub fn write_field<T: Real>(path: &Path, header: &FieldHeader, values: &[Cx<T>]) -> Result<()> {
    if !header.complex || values.len() * 2 != header.values_expected() {
        return Err(Error::Format("complex data does not match the header".into()));
    }
    write_blob(path, header, values.iter().flat_map(|z| [z.re.as_f64(), z.im.as_f64()]))
}

pub fn write_real_field<T: Real>(path: &Path, header: &FieldHeader, values: &[T]) -> Result<()> {
    if header.complex || values.len() != header.values_expected() {
        return Err(Error::Format("real data does not match the header".into()));
    }
    write_blob(path, header, values.iter().map(|v| v.as_f64()))
}

pub fn read_field(path: &Path) -> Result<FieldSnapshot> {
    let (header, values): (FieldHeader, Vec<f64>) = read_blob(path)?;
    if header.format != FIELD_FORMAT {
        return Err(Error::Format(format!("unsupported field format '{}'", header.format)));
    }
    if values.len() != header.values_expected() {
        return Err(Error::Format(format!("expected {} values, found {}", header.values_expected(), values.len())));
    }
    Ok(FieldSnapshot { header, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumHeader {
    pub format: String,
    pub dim: usize,
    pub x_nodes: Lattice<f64>,
    pub k_nodes: Lattice<f64>,
    pub eps_star: f64,
    pub time: f64,
    /// Field grid and x-node stride when the lattice derives from one.
    pub field: Option<(Grid<f64>, usize)>,
}

fn lattice64<T: Real>(l: &Lattice<T>) -> Lattice<f64> {
    Lattice { start: l.start.as_f64(), step: l.step.as_f64(), count: l.count }
}

/// Values are stored x-major, `n[x][k]`.
pub fn write_spectrum<T: Real>(path: &Path, spec: &PhaseSpaceSpectrum<T>) -> Result<()> {
    let psg = &spec.psg;
    let header = SpectrumHeader {
        format: SPECTRUM_FORMAT.into(),
        dim: psg.dim,
        x_nodes: lattice64(&psg.x),
        k_nodes: lattice64(&psg.k),
        eps_star: spec.eps_star.as_f64(),
        time: spec.time.as_f64(),
        field: psg.field.map(|(g, s)| (Grid { dim: g.dim, extent: g.extent.as_f64(), points: g.points }, s)),
    };
    write_blob(path, &header, spec.values.iter().map(|v| v.as_f64()))
}

pub fn read_spectrum(path: &Path) -> Result<PhaseSpaceSpectrum<f64>> {
    let (h, values): (SpectrumHeader, Vec<f64>) = read_blob(path)?;
    if h.format != SPECTRUM_FORMAT {
        return Err(Error::Format(format!("unsupported spectrum format '{}'", h.format)));
    }
    let psg = match h.field {
        Some((g, stride)) => {
            let grid = Grid::new(g.dim, g.extent, g.points)?;
            PhaseSpaceGrid::for_field(grid, stride)?
        }
        None => PhaseSpaceGrid::new(h.dim, h.x_nodes, h.k_nodes)?,
    };
    if psg.x.count != h.x_nodes.count || psg.k.count != h.k_nodes.count || psg.dim != h.dim {
        return Err(Error::Format("lattice description is inconsistent".into()));
    }
    if values.len() != psg.len() {
        return Err(Error::Format(format!("expected {} values, found {}", psg.len(), values.len())));
    }
    Ok(PhaseSpaceSpectrum { psg, eps_star: h.eps_star, values, time: h.time })
}
