//! On-disk formats.
//!
//! Every array goes through one container: an ASCII header line
//!
//! ```text
//! LTFIELD v1 dim=<d> cells=<n1,..> origin=<o1,..> extent=<e1,..> [extra tokens]
//! ```
//!
//! then `\n` and the values as little-endian `f64`, row-major (last axis
//! fastest). Numbers in the header use the shortest decimal form that parses
//! back to the same `f64`, so a read after a write is bit-exact.
//!
//! Extra tokens:
//! * `boundary=1`: one value per boundary face of the grid, faces ordered
//!   by axis, low side before high side, then owning cell in row-major order
//!   over the other axes.
//! * `sinogram=1 angles=<..> offsets=<..>`: a 2D array of shape
//!   (angles, offsets) with the exact sample tables. The `origin` and
//!   `extent` tokens are informational for sinograms.
//!
//! A cone scan is a text manifest (`LTSCAN v1` then `key = value` lines)
//! naming one field file per cone together with the cone geometry.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::diffusion::{boundary_faces, BoundaryField};
use crate::error::{Error, Result};
use crate::excitation::{Aperture, ApertureKind, ConeScanData, Sinogram};
use crate::field::{Grid, ScalarField};

const MAGIC: &str = "LTFIELD";
const VERSION: &str = "v1";
const SCAN_MAGIC: &str = "LTSCAN v1";

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse_list<T: std::str::FromStr>(key: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| t.trim().parse::<T>().map_err(|_| bad(format!("cannot parse `{t}` in `{key}`"))))
        .collect()
}

struct Header {
    cells: Vec<usize>,
    origin: Vec<f64>,
    extent: Vec<f64>,
    tokens: Vec<(String, String)>,
}

impl Header {
    fn grid(&self) -> Result<Grid> {
        Grid::new(self.cells.len(), &self.origin, &self.extent, &self.cells).map_err(|e| bad(format!("bad grid: {e}")))
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.tokens.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn flag(&self, key: &str) -> bool {
        self.get(key) == Some("1")
    }
}

fn encode_grid(grid: &Grid, extra: &str, values: &[f64]) -> Vec<u8> {
    encode(grid.cells(), grid.origin(), grid.extent(), extra, values)
}

fn encode(cells: &[usize], origin: &[f64], extent: &[f64], extra: &str, values: &[f64]) -> Vec<u8> {
    let dim = cells.len();
    let cells: Vec<String> = cells.iter().map(|n| n.to_string()).collect();
    let mut header = format!(
        "{MAGIC} {VERSION} dim={dim} cells={} origin={} extent={}",
        cells.join(","),
        join(origin),
        join(extent)
    );
    if !extra.is_empty() {
        header.push(' ');
        header.push_str(extra);
    }
    header.push('\n');
    let mut out = header.into_bytes();
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> Result<(Header, Vec<f64>)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line"))?;
    let line = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not ASCII"))?;
    let mut words = line.split_whitespace();
    if words.next() != Some(MAGIC) {
        return Err(bad("not an LTFIELD file"));
    }
    match words.next() {
        Some(VERSION) => {}
        other => return Err(bad(format!("unsupported version {other:?}"))),
    }
    let mut tokens = Vec::new();
    for w in words {
        let (k, v) = w.split_once('=').ok_or_else(|| bad(format!("bad header token `{w}`")))?;
        tokens.push((k.to_string(), v.to_string()));
    }
    let find = |key: &str| {
        tokens
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| bad(format!("header lacks `{key}`")))
    };
    let dim: usize = find("dim")?.parse().map_err(|_| bad("bad `dim`"))?;
    let cells: Vec<usize> = parse_list("cells", &find("cells")?)?;
    let origin: Vec<f64> = parse_list("origin", &find("origin")?)?;
    let extent: Vec<f64> = parse_list("extent", &find("extent")?)?;
    if cells.len() != dim || origin.len() != dim || extent.len() != dim {
        return Err(bad("header lists disagree with `dim`"));
    }
    let body = &bytes[nl + 1..];
    if !body.len().is_multiple_of(8) {
        return Err(bad(format!("payload of {} bytes is not a whole number of f64", body.len())));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((
        Header {
            cells,
            origin,
            extent,
            tokens,
        },
        values,
    ))
}

fn expect_len(values: &[f64], n: usize) -> Result<()> {
    if values.len() != n {
        return Err(bad(format!("payload holds {} values, header implies {n}", values.len())));
    }
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_field(field: &ScalarField) -> Vec<u8> {
    encode_grid(field.grid(), "", field.values())
}

pub fn decode_field(bytes: &[u8]) -> Result<ScalarField> {
    let (header, values) = decode(bytes)?;
    if header.flag("boundary") || header.flag("sinogram") {
        return Err(bad("expected a volume field"));
    }
    let grid = header.grid()?;
    expect_len(&values, grid.len())?;
    ScalarField::from_values(grid, values)
}

pub fn write_field(path: &Path, field: &ScalarField) -> Result<()> {
    write_bytes(path, &encode_field(field))
}

pub fn read_field(path: &Path) -> Result<ScalarField> {
    decode_field(&read_bytes(path)?).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}

pub fn encode_boundary(h: &BoundaryField) -> Vec<u8> {
    encode_grid(h.grid(), "boundary=1", h.values())
}

pub fn decode_boundary(bytes: &[u8]) -> Result<BoundaryField> {
    let (header, values) = decode(bytes)?;
    if !header.flag("boundary") {
        return Err(bad("expected a boundary field (`boundary=1`)"));
    }
    let grid = header.grid()?;
    expect_len(&values, boundary_faces(&grid).len())?;
    BoundaryField::from_values(grid, values)
}

pub fn write_boundary(path: &Path, h: &BoundaryField) -> Result<()> {
    write_bytes(path, &encode_boundary(h))
}

pub fn read_boundary(path: &Path) -> Result<BoundaryField> {
    decode_boundary(&read_bytes(path)?).map_err(|e| with_path(e, path))
}

pub fn encode_sinogram(s: &Sinogram) -> Vec<u8> {
    let (a, o) = (s.angles(), s.offsets());
    let lo = [a[0], o[0]];
    let span = [a[a.len() - 1] - a[0], o[o.len() - 1] - o[0]];
    let extra = format!("sinogram=1 angles={} offsets={}", join(a), join(o));
    encode(&[a.len(), o.len()], &lo, &span, &extra, s.values())
}

pub fn decode_sinogram(bytes: &[u8]) -> Result<Sinogram> {
    let (header, values) = decode(bytes)?;
    if !header.flag("sinogram") {
        return Err(bad("expected a sinogram (`sinogram=1`)"));
    }
    let table = |key: &str| -> Result<Vec<f64>> {
        parse_list(key, header.get(key).ok_or_else(|| bad(format!("sinogram lacks `{key}`")))?)
    };
    let angles = table("angles")?;
    let offsets = table("offsets")?;
    if header.cells != [angles.len(), offsets.len()] {
        return Err(bad("sinogram tables disagree with `cells`"));
    }
    expect_len(&values, angles.len() * offsets.len())?;
    Sinogram::new(angles, offsets, values)
}

pub fn write_sinogram(path: &Path, s: &Sinogram) -> Result<()> {
    write_bytes(path, &encode_sinogram(s))
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    decode_sinogram(&read_bytes(path)?).map_err(|e| with_path(e, path))
}

/// Writes `<dir>/<stem>.ltscan` and one `<stem>_cone<j>.ltf` per cone;
/// returns the manifest path.
pub fn write_scan(dir: &Path, stem: &str, scan: &ConeScanData, apertures: &[Aperture]) -> Result<PathBuf> {
    if scan.cones() != apertures.len() {
        return Err(Error::invalid(format!(
            "{} scan fields but {} apertures",
            scan.cones(),
            apertures.len()
        )));
    }
    let mut manifest = format!("{SCAN_MAGIC}\ncones = {}\n", scan.cones());
    for (j, (field, ap)) in scan.fields().iter().zip(apertures).enumerate() {
        let name = format!("{stem}_cone{j}.ltf");
        write_field(&dir.join(&name), field)?;
        let kind = match ap.kind() {
            ApertureKind::Cone => "cone",
            ApertureKind::Full => "full",
        };
        let _ = writeln!(manifest, "cone.{j}.file = {name}");
        let _ = writeln!(manifest, "cone.{j}.kind = {kind}");
        let _ = writeln!(manifest, "cone.{j}.axis = {}", join(ap.axis()));
        let _ = writeln!(manifest, "cone.{j}.half_angle = {:?}", ap.half_angle());
        let _ = writeln!(manifest, "cone.{j}.taper = {:?}", ap.taper_width());
        let _ = writeln!(manifest, "cone.{j}.amplitude = {:?}", ap.amplitude());
    }
    let path = dir.join(format!("{stem}.ltscan"));
    write_bytes(&path, manifest.as_bytes())?;
    Ok(path)
}

/// Reads a manifest written by [`write_scan`]. Field files are resolved
/// relative to the manifest.
pub fn read_scan(manifest: &Path) -> Result<(ConeScanData, Vec<Aperture>)> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(SCAN_MAGIC) {
        return Err(bad(format!("{}: not an LTSCAN manifest", manifest.display())));
    }
    let mut entries = std::collections::BTreeMap::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("manifest line `{line}` is not key = value")))?;
        entries.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |key: &str| {
        entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("manifest lacks `{key}`")))
    };
    let num = |key: &str| -> Result<f64> { get(key)?.parse().map_err(|_| bad(format!("bad number in `{key}`"))) };
    let cones: usize = get("cones")?.parse().map_err(|_| bad("bad cone count"))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut fields = Vec::with_capacity(cones);
    let mut apertures = Vec::with_capacity(cones);
    for j in 0..cones {
        let key = |s: &str| format!("cone.{j}.{s}");
        fields.push(read_field(&base.join(get(&key("file"))?))?);
        let axis: Vec<f64> = parse_list(&key("axis"), get(&key("axis"))?)?;
        let ap = match get(&key("kind"))? {
            "cone" => Aperture::cone(&axis, num(&key("half_angle"))?)?.with_taper(num(&key("taper"))?)?,
            "full" => Aperture::full(axis.len())?,
            other => return Err(bad(format!("unknown aperture kind `{other}`"))),
        };
        apertures.push(ap.with_amplitude(num(&key("amplitude"))?)?);
    }
    let focus = *fields.first().ok_or_else(|| bad("manifest lists no cones"))?.grid();
    Ok((ConeScanData::new(focus, fields)?, apertures))
}

/// Line profile through the cell containing `point`, along `axis`. One row
/// per cell: the coordinate, then one column per field.
pub fn write_profile_csv(path: &Path, axis: usize, point: &[f64], fields: &[(&str, &ScalarField)]) -> Result<()> {
    let grid = *fields.first().ok_or_else(|| Error::invalid("no fields to profile"))?.1.grid();
    if axis >= grid.dim() {
        return Err(Error::invalid(format!("axis {axis} on a {}D grid", grid.dim())));
    }
    if fields.iter().any(|(_, f)| *f.grid() != grid) {
        return Err(Error::invalid("profiled fields live on different grids"));
    }
    let base = grid
        .locate(point)
        .ok_or_else(|| Error::invalid("profile point lies outside the grid"))?;
    let mut out = String::from("coordinate");
    for (name, _) in fields {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let mut idx = base;
    for i in 0..grid.cells()[axis] {
        idx[axis] = i;
        let _ = write!(out, "{:?}", grid.center_of(&idx[..grid.dim()])[axis]);
        for (_, f) in fields {
            let _ = write!(out, ",{:?}", f.get(&idx[..grid.dim()]));
        }
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

/// 8-bit binary PGM of a 2D field (the middle `z` plane of a 3D one) with
/// the linear map `lo → 0`, `hi → 255`. Axis 0 runs left to right and axis 1
/// bottom to top.
pub fn write_pgm(path: &Path, field: &ScalarField, lo: f64, hi: f64) -> Result<()> {
    if !(hi > lo) {
        return Err(Error::invalid(format!("PGM bounds must satisfy lo < hi, got [{lo}, {hi}]")));
    }
    let grid = field.grid();
    let cells = grid.cells();
    let (nx, ny) = (cells[0], cells[1]);
    let mid = if grid.dim() == 3 { cells[2] / 2 } else { 0 };
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    for row in (0..ny).rev() {
        for col in 0..nx {
            let idx = [col, row, mid];
            let t = (field.get(&idx[..grid.dim()]) - lo) / (hi - lo);
            out.push((t.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    write_bytes(path, &out)
}
