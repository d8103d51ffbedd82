//! Configuration, end-to-end experiments and output files.
//!
//! A config is flat `key = value` text, one entry per line, `#` starts a
//! comment. Keys and defaults:
//!
//! ```text
//! seed = 0
//! output.dir = <none>              # nothing is written when unset
//! output.scan = false              # also write the simulated scan data
//! output.timing = false            # wall-clock entries in the report
//! output.pgm_lo / output.pgm_hi    # PGM bounds, default 0 and max(truth)
//! output.profile_axis = 0
//! output.profile_point = <grid midpoint>
//!
//! grid.dim = 2
//! grid.cells = 128                 # one count, or one per axis
//! grid.side = 20                   # centered cube; or grid.origin + grid.extent
//!
//! medium.mu_a = 0.05               # mm⁻¹
//! medium.mu_s = 15
//! medium.g = 0.9
//! medium.n = 1.37
//! medium.D, medium.A               # direct values instead of mu_s, g, n
//!
//! phantom.preset = two_inclusions  # or none
//! phantom.background = 0
//! phantom.inclusions = <count>     # with preset = none
//! phantom.inclusion.<i>.center / .radius / .concentration
//!
//! boundary.h = 1                   # constant datum; or boundary.file = <LTFIELD>
//!
//! excitation.kind = cones          # or xray
//! excitation.half_angle_deg = 19.2
//! excitation.taper_deg = 0.15 · half-angle
//! excitation.axes_deg = 0,36,..,324  # in-plane axis angles
//! excitation.axis.<j> = x,y[,z]    # explicit axes instead of axes_deg
//! excitation.angles = 180          # xray
//! excitation.offsets = 256
//! excitation.offset_half_width = <max corner distance>
//!
//! scan.mode = fast                 # or full
//! scan.quadrature = consistent     # or continuum, for full-physics solves
//! scan.spot_check = 9              # full-physics check points, >= 9
//!
//! noise.kind = poisson             # or none
//! noise.photons_per_unit = 1e6
//!
//! recon.method = multiplier        # multiplier | lsqr | both (cones), fbp (xray)
//! recon.eps = 0.01
//! recon.focus = extended           # or field: focus grid of the multiplier data
//! recon.force_pseudo = false
//! recon.lsqr.max_iters = 500
//! recon.lsqr.atol = 1e-8
//! recon.lsqr.nonneg = false
//! recon.fbp.filter = ramp-hann     # or ramp
//! recon.fbp.cutoff = 0.9
//!
//! error.background = 0             # metric over cells with truth > this
//! ```
//!
//! Every value a run used, given or defaulted, is echoed in its report as
//! `config.<key>`. Random streams get seeds `derive_seed(seed, name)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::algebraic::{apply_noise, derive_seed, lsqr, relative_error, LsqrOptions, LsqrStep, NoiseModel, ScanMap};
use crate::diffusion::{assemble_operator, solve_adjoint_weight, BoundaryField, DiffusionOperator, Quadrature};
use crate::error::{Error, Result};
use crate::excitation::{
    focus_values, simulate_boundary_scan, uniform_angles, uniform_offsets, xray_transform, Aperture, ConeScanData,
    ScanMode, Sinogram,
};
use crate::field::{Grid, ScalarField};
use crate::format;
use crate::multiplier::{default_directions, ellipticity_margin, inversion_focus_grid, pseudo_invert_multiplier};
use crate::optics::OpticalMedium;
use crate::phantom::{build_phantom, Inclusion, PhantomSpec};
use crate::xray_recon::{divide_by_weight, fbp, FbpFilter, FilterKind};

/// Raw `key = value` entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            if raw.entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
        }
        Ok(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RawConfig::parse(&text)
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        self.entries.insert(k.trim().to_string(), v.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

/// Reads typed values and remembers every effective value for the echo.
struct Reader<'a> {
    raw: &'a RawConfig,
    used: BTreeMap<String, String>,
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_list(x: &[f64]) -> String {
    x.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

impl<'a> Reader<'a> {
    fn has(&self, key: &str) -> bool {
        self.raw.entries.contains_key(key)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, s: &str) -> Result<T> {
        s.parse()
            .map_err(|_| Error::Config(format!("cannot parse `{s}` for `{key}`")))
    }

    fn record(&mut self, key: &str, value: String) {
        self.used.insert(key.to_string(), value);
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        let v = match self.raw.get(key) {
            Some(s) => self.parse::<f64>(key, s)?,
            None => default,
        };
        if !v.is_finite() {
            return Err(Error::Config(format!("`{key}` must be finite")));
        }
        self.record(key, fmt_f64(v));
        Ok(v)
    }

    fn f64_req(&mut self, key: &str) -> Result<f64> {
        if !self.has(key) {
            return Err(Error::Config(format!("missing `{key}`")));
        }
        self.f64_or(key, 0.0)
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        let v = match self.raw.get(key) {
            Some(s) => self.parse::<usize>(key, s)?,
            None => default,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        let v = match self.raw.get(key) {
            Some(s) => self.parse::<u64>(key, s)?,
            None => default,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        let v = match self.raw.get(key) {
            Some("true") | Some("1") => true,
            Some("false") | Some("0") => false,
            Some(s) => return Err(Error::Config(format!("`{key}` must be true or false, got `{s}`"))),
            None => default,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    fn word_or(&mut self, key: &str, default: &str, allowed: &[&str]) -> Result<String> {
        let v = self.raw.get(key).unwrap_or(default).to_string();
        if !allowed.contains(&v.as_str()) {
            return Err(Error::Config(format!("`{key}` must be one of {allowed:?}, got `{v}`")));
        }
        self.record(key, v.clone());
        Ok(v)
    }

    fn list_or(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        let v = match self.raw.get(key) {
            Some(s) => s
                .split(',')
                .map(|t| self.parse::<f64>(key, t.trim()))
                .collect::<Result<Vec<f64>>>()?,
            None => default.to_vec(),
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(format!("`{key}` must hold finite numbers")));
        }
        self.record(key, fmt_list(&v));
        Ok(v)
    }

    fn list_req(&mut self, key: &str) -> Result<Vec<f64>> {
        if !self.has(key) {
            return Err(Error::Config(format!("missing `{key}`")));
        }
        self.list_or(key, &[])
    }

    fn path_opt(&mut self, key: &str) -> Option<PathBuf> {
        let p = self.raw.get(key).map(PathBuf::from);
        if let Some(p) = &p {
            self.record(key, p.display().to_string());
        }
        p
    }

    /// Errors on keys that were never read.
    fn finish(self, context: &str) -> Result<BTreeMap<String, String>> {
        if let Some(k) = self.raw.entries.keys().find(|k| !self.used.contains_key(*k)) {
            return Err(Error::Config(format!("key `{k}` is unknown or does not apply ({context})")));
        }
        Ok(self.used)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryDatum {
    Constant(f64),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Excitation {
    Cones(Vec<Aperture>),
    Xray { angles: Vec<f64>, offsets: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeMethod {
    Multiplier,
    Lsqr,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeRecon {
    pub method: ConeMethod,
    pub eps: f64,
    /// Multiplier data on the grown focus grid rather than the field grid.
    pub extended_focus: bool,
    pub force_pseudo: bool,
    pub lsqr: LsqrOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    pub scan: bool,
    pub timing: bool,
    pub pgm_bounds: Option<(f64, f64)>,
    pub profile_axis: usize,
    pub profile_point: Vec<f64>,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub grid: Grid,
    pub medium: OpticalMedium,
    pub phantom: PhantomSpec,
    pub boundary: BoundaryDatum,
    pub excitation: Excitation,
    pub scan_mode: ScanMode,
    pub spot_check: usize,
    pub noise: Option<f64>,
    pub cone_recon: ConeRecon,
    pub fbp_filter: FbpFilter,
    pub error_background: f64,
    pub output: OutputSpec,
    /// Effective value of every key read, for the report.
    pub echo: BTreeMap<String, String>,
}

const DEFAULT_AXES_DEG: [f64; 10] = [0.0, 36.0, 72.0, 108.0, 144.0, 180.0, 216.0, 252.0, 288.0, 324.0];

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        ExperimentConfig::from_raw(&RawConfig::parse(text)?)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let mut raw = RawConfig::from_file(path)?;
        for o in overrides {
            raw.set(o)?;
        }
        ExperimentConfig::from_raw(&raw)
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let cfg = |e: Error| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        };
        let mut r = Reader { raw, used: BTreeMap::new() };
        let seed = r.u64_or("seed", 0)?;

        let dim = r.usize_or("grid.dim", 2)?;
        if dim != 2 && dim != 3 {
            return Err(Error::Config("grid.dim must be 2 or 3".into()));
        }
        let cells = match r.raw.get("grid.cells") {
            Some(s) if s.contains(',') => {
                let c: Vec<usize> = s
                    .split(',')
                    .map(|t| r.parse::<usize>("grid.cells", t.trim()))
                    .collect::<Result<_>>()?;
                if c.len() != dim {
                    return Err(Error::Config("grid.cells needs one count per axis".into()));
                }
                c
            }
            Some(s) => vec![r.parse::<usize>("grid.cells", s)?; dim],
            None => vec![128; dim],
        };
        r.record("grid.cells", cells.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","));
        let grid = if r.has("grid.origin") || r.has("grid.extent") {
            let origin = r.list_req("grid.origin")?;
            let extent = r.list_req("grid.extent")?;
            Grid::new(dim, &origin, &extent, &cells).map_err(cfg)?
        } else {
            let side = r.f64_or("grid.side", 20.0)?;
            let origin = vec![-0.5 * side; dim];
            Grid::new(dim, &origin, &vec![side; dim], &cells).map_err(cfg)?
        };

        let mu_a = r.f64_or("medium.mu_a", 0.05)?;
        let medium = if r.has("medium.D") || r.has("medium.A") {
            let d = r.f64_req("medium.D")?;
            let a = r.f64_req("medium.A")?;
            OpticalMedium::new(mu_a, d, a)
        } else {
            let mu_s = r.f64_or("medium.mu_s", 15.0)?;
            let g = r.f64_or("medium.g", 0.9)?;
            let n = r.f64_or("medium.n", 1.37)?;
            OpticalMedium::from_tissue(mu_a, mu_s, g, n)
        }
        .map_err(cfg)?;

        let preset = r.word_or("phantom.preset", "two_inclusions", &["two_inclusions", "none"])?;
        let background = r.f64_or("phantom.background", 0.0)?;
        let inclusions = if preset == "two_inclusions" {
            PhantomSpec::two_inclusions(dim).inclusions
        } else {
            let count = r.usize_or("phantom.inclusions", 0)?;
            (0..count)
                .map(|i| {
                    let key = |s: &str| format!("phantom.inclusion.{i}.{s}");
                    Ok(Inclusion {
                        center: r.list_req(&key("center"))?,
                        radius: r.f64_req(&key("radius"))?,
                        concentration: r.f64_req(&key("concentration"))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        };
        let phantom = PhantomSpec { background, inclusions };
        phantom.validate(&grid).map_err(cfg)?;

        let boundary = match r.path_opt("boundary.file") {
            Some(p) => {
                if r.has("boundary.h") {
                    return Err(Error::Config("give either boundary.h or boundary.file".into()));
                }
                if !p.exists() {
                    return Err(Error::Config(format!("boundary file {} does not exist", p.display())));
                }
                BoundaryDatum::File(p)
            }
            None => BoundaryDatum::Constant(r.f64_or("boundary.h", 1.0)?),
        };

        let kind = r.word_or("excitation.kind", "cones", &["cones", "xray"])?;
        let excitation = if kind == "cones" {
            let beta = r.f64_or("excitation.half_angle_deg", 19.2)?.to_radians();
            let taper = r
                .f64_or("excitation.taper_deg", (crate::excitation::DEFAULT_TAPER_FRACTION * beta).to_degrees())?
                .to_radians();
            let axes: Vec<Vec<f64>> = if r.has("excitation.axis.0") {
                let mut axes = Vec::new();
                while r.has(&format!("excitation.axis.{}", axes.len())) {
                    let key = format!("excitation.axis.{}", axes.len());
                    axes.push(r.list_req(&key)?);
                }
                axes
            } else {
                r.list_or("excitation.axes_deg", &DEFAULT_AXES_DEG)?
                    .iter()
                    .map(|d| {
                        let mut a = vec![d.to_radians().cos(), d.to_radians().sin()];
                        a.resize(dim, 0.0);
                        a
                    })
                    .collect()
            };
            if axes.is_empty() {
                return Err(Error::Config("at least one cone axis is required".into()));
            }
            let aps = axes
                .iter()
                .map(|a| {
                    if a.len() != dim {
                        return Err(Error::Config(format!("cone axis {a:?} is not {dim}-dimensional")));
                    }
                    Aperture::cone(a, beta)?.with_taper(taper)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(cfg)?;
            Excitation::Cones(aps)
        } else {
            if dim != 2 {
                return Err(Error::Config("X-ray excitation needs grid.dim = 2".into()));
            }
            let na = r.usize_or("excitation.angles", 180)?;
            let ns = r.usize_or("excitation.offsets", 256)?;
            let corner = corner_distance(&grid);
            let half = r.f64_or("excitation.offset_half_width", corner)?;
            if na == 0 || ns < 2 || !(half > 0.0) {
                return Err(Error::Config("X-ray scan needs angles >= 1, offsets >= 2 and a positive width".into()));
            }
            Excitation::Xray {
                angles: uniform_angles(na),
                offsets: uniform_offsets(ns, half),
            }
        };

        let quadrature = match r.word_or("scan.quadrature", "consistent", &["consistent", "continuum"])?.as_str() {
            "consistent" => Quadrature::Consistent,
            _ => Quadrature::Continuum,
        };
        let scan_mode = match r.word_or("scan.mode", "fast", &["fast", "full"])?.as_str() {
            "fast" => ScanMode::Fast,
            _ => ScanMode::FullPhysics(quadrature),
        };
        let spot_check = if kind == "cones" {
            let n = r.usize_or("scan.spot_check", 9)?;
            if n < 9 {
                return Err(Error::Config("scan.spot_check must be at least 9".into()));
            }
            n
        } else {
            0
        };

        let noise = match r.word_or("noise.kind", "poisson", &["poisson", "none"])?.as_str() {
            "poisson" => {
                let k = r.f64_or("noise.photons_per_unit", 1e6)?;
                NoiseModel::poisson(k, 0).map_err(cfg)?;
                Some(k)
            }
            _ => None,
        };

        let mut cone_recon = ConeRecon {
            method: ConeMethod::Multiplier,
            eps: 0.01,
            extended_focus: true,
            force_pseudo: false,
            lsqr: LsqrOptions::default(),
        };
        let mut fbp_filter = FbpFilter::default();
        if kind == "cones" {
            let method = r.word_or("recon.method", "multiplier", &["multiplier", "lsqr", "both"])?;
            cone_recon.method = match method.as_str() {
                "multiplier" => ConeMethod::Multiplier,
                "lsqr" => ConeMethod::Lsqr,
                _ => ConeMethod::Both,
            };
            if method != "lsqr" {
                cone_recon.eps = r.f64_or("recon.eps", 0.01)?;
                if cone_recon.eps < 0.0 {
                    return Err(Error::Config("recon.eps must be >= 0".into()));
                }
                cone_recon.extended_focus = r.word_or("recon.focus", "extended", &["extended", "field"])? == "extended";
                cone_recon.force_pseudo = r.bool_or("recon.force_pseudo", false)?;
            }
            if method != "multiplier" {
                cone_recon.lsqr = LsqrOptions {
                    max_iters: r.usize_or("recon.lsqr.max_iters", 500)?,
                    atol: r.f64_or("recon.lsqr.atol", 1e-8)?,
                    clamp_nonnegative: r.bool_or("recon.lsqr.nonneg", false)?,
                };
            }
        } else {
            r.word_or("recon.method", "fbp", &["fbp"])?;
            let kind = match r.word_or("recon.fbp.filter", "ramp-hann", &["ramp", "ramp-hann"])?.as_str() {
                "ramp" => FilterKind::Ramp,
                _ => FilterKind::RampHann,
            };
            let cutoff = r.f64_or("recon.fbp.cutoff", 0.9)?;
            fbp_filter = FbpFilter::new(kind, cutoff).map_err(cfg)?;
        }
        let error_background = r.f64_or("error.background", 0.0)?;

        let dir = r.path_opt("output.dir");
        let scan = r.bool_or("output.scan", false)?;
        let timing = r.bool_or("output.timing", false)?;
        let pgm_bounds = if r.has("output.pgm_lo") || r.has("output.pgm_hi") {
            let lo = r.f64_req("output.pgm_lo")?;
            let hi = r.f64_req("output.pgm_hi")?;
            if !(hi > lo) {
                return Err(Error::Config("output.pgm_hi must exceed output.pgm_lo".into()));
            }
            Some((lo, hi))
        } else {
            None
        };
        let profile_axis = r.usize_or("output.profile_axis", 0)?;
        if profile_axis >= dim {
            return Err(Error::Config("output.profile_axis exceeds the grid dimension".into()));
        }
        let profile_point = r.list_or("output.profile_point", &grid.midpoint()[..dim])?;
        if profile_point.len() != dim || !grid.contains(&profile_point) {
            return Err(Error::Config("output.profile_point must be a point of the grid".into()));
        }

        let echo = r.finish(&format!("excitation.kind = {kind}"))?;
        Ok(ExperimentConfig {
            seed,
            grid,
            medium,
            phantom,
            boundary,
            excitation,
            scan_mode,
            spot_check,
            noise,
            cone_recon,
            fbp_filter,
            error_background,
            output: OutputSpec {
                dir,
                scan,
                timing,
                pgm_bounds,
                profile_axis,
                profile_point,
            },
            echo,
        })
    }

    pub fn apertures(&self) -> Result<&[Aperture]> {
        match &self.excitation {
            Excitation::Cones(aps) => Ok(aps),
            Excitation::Xray { .. } => Err(Error::Config("this step needs excitation.kind = cones".into())),
        }
    }

    fn noise_model(&self, stream: &str) -> Option<NoiseModel> {
        self.noise.map(|k| NoiseModel {
            photons_per_unit: k,
            seed: derive_seed(self.seed, stream),
        })
    }
}

fn corner_distance(grid: &Grid) -> f64 {
    let dim = grid.dim();
    (0..1usize << dim)
        .map(|mask| {
            (0..dim)
                .map(|a| {
                    let x = grid.origin()[a] + if mask >> a & 1 == 1 { grid.extent()[a] } else { 0.0 };
                    x * x
                })
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Ordered `key = value` run report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn push_f64(&mut self, key: impl Into<String>, value: f64) {
        self.push(key, fmt_f64(value));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    fn echo(&mut self, cfg: &ExperimentConfig) {
        for (k, v) in &cfg.echo {
            self.push(format!("config.{k}"), v);
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Everything a run produced.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub report: Report,
    /// Volume fields on the field grid, written as `<name>.ltf` and `<name>.pgm`.
    pub fields: Vec<(String, ScalarField)>,
    pub lsqr_history: Option<Vec<LsqrStep>>,
    pub sinogram: Option<Sinogram>,
    pub scan: Option<(ConeScanData, Vec<Aperture>)>,
}

impl RunOutput {
    pub fn field(&self, name: &str) -> Option<&ScalarField> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }
}

pub fn build_truth(cfg: &ExperimentConfig) -> Result<ScalarField> {
    build_phantom(&cfg.phantom, &cfg.grid)
}

pub fn boundary_datum(cfg: &ExperimentConfig) -> Result<BoundaryField> {
    match &cfg.boundary {
        BoundaryDatum::Constant(h) => Ok(BoundaryField::constant(cfg.grid, *h)),
        BoundaryDatum::File(p) => {
            let h = format::read_boundary(p)?;
            if *h.grid() != cfg.grid {
                return Err(Error::Config(format!("{}: boundary datum is on a different grid", p.display())));
            }
            Ok(h)
        }
    }
}

/// Operator, boundary datum and weight `v = Vh`.
pub fn build_weight(cfg: &ExperimentConfig) -> Result<(DiffusionOperator, BoundaryField, ScalarField)> {
    let op = assemble_operator(&cfg.grid, &cfg.medium);
    let h = boundary_datum(cfg)?;
    let v = solve_adjoint_weight(&op, &h)?;
    Ok((op, h, v))
}

fn push_weight(report: &mut Report, cfg: &ExperimentConfig, v: &ScalarField) {
    report.push_f64("medium.D", cfg.medium.diffusion);
    report.push_f64("medium.A", cfg.medium.robin);
    report.push_f64("medium.k", cfg.medium.k());
    report.push_f64("weight.min", v.min());
    report.push_f64("weight.max", v.max());
    report.push_f64("weight.max_inverse", 1.0 / v.min());
}

/// Margin report for the configured cone family.
pub fn check_stability(cfg: &ExperimentConfig) -> Result<Report> {
    let aps = cfg.apertures()?;
    let s = ellipticity_margin(aps, default_directions(cfg.grid.dim()))?;
    let mut report = Report::default();
    report.push("stability.stable", s.is_stable());
    report.push_f64("stability.margin", s.margin);
    report.push_f64("stability.max", s.max);
    report.push_f64("stability.mean", s.mean);
    report.push_f64("stability.ratio", s.ratio);
    report.push("stability.directions", s.directions);
    report.push("stability.invisible_count", s.invisible.len());
    let dim = cfg.grid.dim();
    for (i, w) in s.invisible.iter().enumerate() {
        report.push(format!("stability.invisible.{i}"), fmt_list(&w[..dim]));
    }
    report.echo(cfg);
    Ok(report)
}

/// Simulated measurements of one run, before noise.
pub enum Measurements {
    Cones(ConeScanData),
    Xray(Sinogram),
}

/// Focus grid the cone data are recorded on.
pub fn scan_focus_grid(cfg: &ExperimentConfig) -> Grid {
    let multiplier = cfg.cone_recon.method != ConeMethod::Lsqr;
    if multiplier && cfg.cone_recon.extended_focus {
        inversion_focus_grid(&cfg.grid)
    } else {
        cfg.grid
    }
}

/// Clean measurements of `f` for the configured excitation.
pub fn simulate(
    cfg: &ExperimentConfig,
    op: &DiffusionOperator,
    h: &BoundaryField,
    v: &ScalarField,
    f: &ScalarField,
) -> Result<Measurements> {
    match &cfg.excitation {
        Excitation::Cones(aps) => Ok(Measurements::Cones(simulate_boundary_scan(
            op,
            h,
            f,
            aps,
            &scan_focus_grid(cfg),
            cfg.scan_mode,
        )?)),
        Excitation::Xray { angles, offsets } => {
            let g = f.zip_map(v, |f, v| f * v);
            Ok(Measurements::Xray(xray_transform(&g, angles, offsets)?))
        }
    }
}

/// Poisson noise on every measurement, one stream per cone.
pub fn add_noise(cfg: &ExperimentConfig, data: Measurements) -> Result<Measurements> {
    match data {
        Measurements::Cones(scan) => {
            let mut fields = Vec::with_capacity(scan.cones());
            for (j, field) in scan.fields().iter().enumerate() {
                fields.push(match cfg.noise_model(&format!("noise.cone.{j}")) {
                    Some(m) => ScalarField::from_values(*field.grid(), apply_noise(&m, field.values())?)?,
                    None => field.clone(),
                });
            }
            Ok(Measurements::Cones(ConeScanData::new(*scan.focus(), fields)?))
        }
        Measurements::Xray(s) => match cfg.noise_model("noise.sinogram") {
            Some(m) => {
                let values = apply_noise(&m, s.values())?;
                Ok(Measurements::Xray(Sinogram::new(s.angles().to_vec(), s.offsets().to_vec(), values)?))
            }
            None => Ok(Measurements::Xray(s)),
        },
    }
}

/// Restricts scan data to the focus cells on `field`.
fn crop_scan(scan: &ConeScanData, field: &Grid) -> Result<ConeScanData> {
    let off = field
        .lattice_offset(scan.focus())
        .ok_or_else(|| Error::invalid("focus grid is off the field lattice"))?;
    let dim = field.dim();
    let fields = scan.fields().iter().map(|d| {
        let values = (0..field.len())
            .map(|q| {
                let idx = field.multi_index(q);
                let mut p = [0usize; 3];
                for a in 0..dim {
                    let i = idx[a] as i64 - off[a];
                    if i < 0 || i as usize >= scan.focus().cells()[a] {
                        return Err(Error::invalid("focus grid does not cover the field grid"));
                    }
                    p[a] = i as usize;
                }
                Ok(d.get(&p[..dim]))
            })
            .collect::<Result<Vec<_>>>()?;
        ScalarField::from_values(*field, values)
    });
    ConeScanData::new(*field, fields.collect::<Result<Vec<_>>>()?)
}

/// Spot-check points: a Kronecker sequence over the middle half of the grid
/// (the `z` mid-plane in 3D).
fn spot_points(grid: &Grid, n: usize) -> Vec<[f64; 3]> {
    let alpha = [0.754_877_666_246_692_7, 0.569_840_290_998_053_2];
    let mid = grid.midpoint();
    (0..n)
        .map(|i| {
            let mut x = mid;
            for a in 0..2 {
                let t = (0.5 + (i + 1) as f64 * alpha[a]).fract();
                x[a] = grid.origin()[a] + grid.extent()[a] * (0.25 + 0.5 * t);
            }
            x
        })
        .collect()
}

fn spot_check(
    cfg: &ExperimentConfig,
    op: &DiffusionOperator,
    h: &BoundaryField,
    v: &ScalarField,
    f: &ScalarField,
    report: &mut Report,
) -> Result<()> {
    let aps = cfg.apertures()?;
    let quadrature = match cfg.scan_mode {
        ScanMode::FullPhysics(q) => q,
        ScanMode::Fast => Quadrature::Consistent,
    };
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for x in spot_points(&cfg.grid, cfg.spot_check) {
        for ap in aps {
            let (fast, full) = focus_values(op, h, v, f, ap, &x, quadrature)?;
            worst = worst.max((fast - full).abs());
            scale = scale.max(fast.abs());
        }
    }
    report.push("spot_check.points", cfg.spot_check);
    report.push_f64("spot_check.max_abs_gap", worst);
    report.push_f64("spot_check.reciprocity_residual", if scale > 0.0 { worst / scale } else { 0.0 });
    Ok(())
}

fn push_errors(report: &mut Report, cfg: &ExperimentConfig, name: &str, truth: &ScalarField, recon: &ScalarField) {
    match relative_error(truth, recon, cfg.error_background) {
        Ok(m) => {
            report.push_f64(format!("error.{name}.absolute"), m.absolute);
            report.push_f64(format!("error.{name}.signed"), m.signed);
            report.push(format!("error.{name}.cells"), m.cells);
        }
        Err(Error::EmptyMask(_)) => report.push(format!("error.{name}"), "empty-mask"),
        Err(e) => report.push(format!("error.{name}"), e),
    }
    let diff = recon.zip_map(truth, |a, b| a - b);
    let tn = truth.norm_l2();
    if tn > 0.0 {
        report.push_f64(format!("error.{name}.relative_l2"), diff.norm_l2() / tn);
    }
}

/// Named reconstructions and the LSQR history, if LSQR ran.
pub type ConeReconstructions = (Vec<(String, ScalarField)>, Option<Vec<LsqrStep>>);

/// Reconstructions from cone data on [`scan_focus_grid`].
pub fn reconstruct_cones(
    cfg: &ExperimentConfig,
    scan: &ConeScanData,
    apertures: &[Aperture],
    v: &ScalarField,
    report: &mut Report,
) -> Result<ConeReconstructions> {
    let dim = cfg.grid.dim();
    let stability = ellipticity_margin(apertures, default_directions(dim))?;
    report.push_f64("stability.margin", stability.margin);
    report.push_f64("stability.ratio", stability.ratio);
    report.push("stability.invisible_count", stability.invisible.len());
    let rc = &cfg.cone_recon;
    let mut out = Vec::new();
    let mut history = None;
    if rc.method != ConeMethod::Lsqr {
        if !stability.is_stable() && !rc.force_pseudo {
            return Err(Error::StabilityViolation { margin: stability.margin });
        }
        report.push("multiplier.pseudo", !stability.is_stable());
        report.push_f64("multiplier.eps", rc.eps);
        report.push("multiplier.focus_cells", fmt_cells(scan.focus()));
        out.push(("recon_multiplier".to_string(), pseudo_invert_multiplier(scan, apertures, v, rc.eps)?));
    }
    if rc.method != ConeMethod::Multiplier {
        let data = if scan.focus() == v.grid() { scan.clone() } else { crop_scan(scan, v.grid())? };
        let map = ScanMap::new(v, v.grid(), apertures)?;
        let rhs: Vec<f64> = data.fields().iter().flat_map(|d| d.values().iter().copied()).collect();
        let result = lsqr(&map, &rhs, &rc.lsqr)?;
        report.push("lsqr.focus_cells", fmt_cells(v.grid()));
        report.push("lsqr.iterations", result.iterations());
        report.push("lsqr.converged", result.converged);
        let last = result.history.last().expect("history has the initial entry");
        report.push_f64("lsqr.residual", last.residual);
        report.push_f64("lsqr.normal_residual", last.normal_residual);
        out.push(("recon_lsqr".to_string(), ScalarField::from_values(*v.grid(), result.solution)?));
        history = Some(result.history);
    }
    Ok((out, history))
}

fn fmt_cells(g: &Grid) -> String {
    g.cells().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

/// FBP reconstruction of `v f` followed by division by `v`.
pub fn reconstruct_xray(
    cfg: &ExperimentConfig,
    sino: &Sinogram,
    v: &ScalarField,
    report: &mut Report,
) -> Result<ScalarField> {
    let g = fbp(sino, &cfg.grid, &cfg.fbp_filter)?;
    let division = divide_by_weight(&g, v, crate::diffusion::weight_floor(v))?;
    report.push_f64("division.degenerate_fraction", division.degenerate_fraction);
    report.push_f64("division.max_inverse_weight", division.max_inverse_weight);
    if let Some(w) = &division.warning {
        report.push("division.warning", w);
    }
    Ok(division.field)
}

fn finish_report(report: &mut Report, cfg: &ExperimentConfig, truth: &ScalarField, started: Instant) {
    let (lo, hi) = cfg.output.pgm_bounds.unwrap_or((0.0, truth.max().max(f64::MIN_POSITIVE)));
    report.push_f64("output.pgm_lo", lo);
    report.push_f64("output.pgm_hi", hi);
    if cfg.output.timing {
        report.push_f64("time.seconds", started.elapsed().as_secs_f64());
    }
    report.echo(cfg);
}

/// Cone-excitation experiment: weight, margin check, scan with spot check,
/// noise and reconstruction.
pub fn run_xmlt(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let aps = cfg.apertures()?.to_vec();
    let mut report = Report::default();
    report.push("run", "xmlt");
    let stability = ellipticity_margin(&aps, default_directions(cfg.grid.dim()))?;
    if !stability.is_stable() && !cfg.cone_recon.force_pseudo && cfg.cone_recon.method != ConeMethod::Lsqr {
        return Err(Error::StabilityViolation { margin: stability.margin });
    }
    let truth = build_truth(cfg)?;
    let (op, h, v) = build_weight(cfg)?;
    push_weight(&mut report, cfg, &v);
    spot_check(cfg, &op, &h, &v, &truth, &mut report)?;
    let clean = simulate(cfg, &op, &h, &v, &truth)?;
    let Measurements::Cones(scan) = add_noise(cfg, clean)? else {
        unreachable!("cone excitation yields cone data")
    };
    report.push("scan.focus_cells", fmt_cells(scan.focus()));
    report.push("seed.noise", derive_seed(cfg.seed, "noise.cone.0"));
    let (recons, history) = reconstruct_cones(cfg, &scan, &aps, &v, &mut report)?;
    for (name, r) in &recons {
        push_errors(&mut report, cfg, name.trim_start_matches("recon_"), &truth, r);
    }
    finish_report(&mut report, cfg, &truth, started);
    let mut fields = vec![("truth".to_string(), truth), ("weight".to_string(), v)];
    fields.extend(recons);
    let out = RunOutput {
        report,
        fields,
        lsqr_history: history,
        sinogram: None,
        scan: cfg.output.scan.then_some((scan, aps)),
    };
    if let Some(dir) = &cfg.output.dir {
        emit_outputs(dir, cfg, &out)?;
    }
    Ok(out)
}

/// Single-line X-ray experiment: sinogram of `v f`, noise, FBP and division.
pub fn run_xlct(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let started = Instant::now();
    if !matches!(cfg.excitation, Excitation::Xray { .. }) {
        return Err(Error::Config("run-xlct needs excitation.kind = xray".into()));
    }
    let mut report = Report::default();
    report.push("run", "xlct");
    let truth = build_truth(cfg)?;
    let (op, h, v) = build_weight(cfg)?;
    push_weight(&mut report, cfg, &v);
    let Measurements::Xray(sino) = add_noise(cfg, simulate(cfg, &op, &h, &v, &truth)?)? else {
        unreachable!("X-ray excitation yields a sinogram")
    };
    report.push("seed.noise", derive_seed(cfg.seed, "noise.sinogram"));
    let recon = reconstruct_xray(cfg, &sino, &v, &mut report)?;
    push_errors(&mut report, cfg, "fbp", &truth, &recon);
    finish_report(&mut report, cfg, &truth, started);
    let out = RunOutput {
        report,
        fields: vec![
            ("truth".to_string(), truth),
            ("weight".to_string(), v),
            ("recon_fbp".to_string(), recon),
        ],
        lsqr_history: None,
        sinogram: Some(sino),
        scan: None,
    };
    if let Some(dir) = &cfg.output.dir {
        emit_outputs(dir, cfg, &out)?;
    }
    Ok(out)
}

fn finish_step(cfg: &ExperimentConfig, out: RunOutput) -> Result<RunOutput> {
    if let Some(dir) = &cfg.output.dir {
        emit_outputs(dir, cfg, &out)?;
    }
    Ok(out)
}

fn bare_output(report: Report, fields: Vec<(String, ScalarField)>) -> RunOutput {
    RunOutput {
        report,
        fields,
        lsqr_history: None,
        sinogram: None,
        scan: None,
    }
}

/// The configured phantom alone.
pub fn run_phantom(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let mut report = Report::default();
    report.push("run", "phantom");
    let truth = build_truth(cfg)?;
    report.push_f64("phantom.max", truth.max());
    report.push_f64("phantom.integral", truth.integral());
    finish_report(&mut report, cfg, &truth, started);
    finish_step(cfg, bare_output(report, vec![("truth".to_string(), truth)]))
}

/// The weight `v = Vh` for the configured medium and boundary datum.
pub fn run_weight(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let mut report = Report::default();
    report.push("run", "weight");
    let (_, _, v) = build_weight(cfg)?;
    push_weight(&mut report, cfg, &v);
    finish_report(&mut report, cfg, &v, started);
    finish_step(cfg, bare_output(report, vec![("weight".to_string(), v)]))
}

/// Noisy measurements of the configured phantom. Cone scans are spot
/// checked against full-physics solves and always written as scan data.
pub fn run_scan(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let mut report = Report::default();
    report.push("run", "scan");
    let truth = build_truth(cfg)?;
    let (op, h, v) = build_weight(cfg)?;
    push_weight(&mut report, cfg, &v);
    let mut out = bare_output(Report::default(), Vec::new());
    match add_noise(cfg, simulate(cfg, &op, &h, &v, &truth)?)? {
        Measurements::Cones(scan) => {
            spot_check(cfg, &op, &h, &v, &truth, &mut report)?;
            report.push("scan.focus_cells", fmt_cells(scan.focus()));
            report.push("seed.noise", derive_seed(cfg.seed, "noise.cone.0"));
            out.scan = Some((scan, cfg.apertures()?.to_vec()));
        }
        Measurements::Xray(sino) => {
            report.push("seed.noise", derive_seed(cfg.seed, "noise.sinogram"));
            out.sinogram = Some(sino);
        }
    }
    finish_report(&mut report, cfg, &truth, started);
    out.report = report;
    out.fields = vec![("truth".to_string(), truth), ("weight".to_string(), v)];
    finish_step(cfg, out)
}

/// Reconstruction from measurements on disk: an `LTSCAN` manifest (cone
/// data, apertures taken from the manifest) or an `LTFIELD` sinogram.
/// Errors are reported against the configured phantom.
pub fn run_reconstruct(cfg: &ExperimentConfig, data: &Path) -> Result<RunOutput> {
    let started = Instant::now();
    let head = fs::read(data).map_err(|e| Error::io(data, e))?;
    let mut report = Report::default();
    report.push("run", "reconstruct");
    report.push("input", data.display());
    let truth = build_truth(cfg)?;
    let (_, _, v) = build_weight(cfg)?;
    push_weight(&mut report, cfg, &v);
    let mut out = bare_output(Report::default(), vec![("truth".to_string(), truth.clone()), ("weight".to_string(), v.clone())]);
    if head.starts_with(b"LTSCAN") {
        let (scan, aps) = format::read_scan(data)?;
        let (recons, history) = reconstruct_cones(cfg, &scan, &aps, &v, &mut report)?;
        for (name, r) in &recons {
            push_errors(&mut report, cfg, name.trim_start_matches("recon_"), &truth, r);
        }
        out.fields.extend(recons);
        out.lsqr_history = history;
    } else {
        let sino = format::decode_sinogram(&head)?;
        let recon = reconstruct_xray(cfg, &sino, &v, &mut report)?;
        push_errors(&mut report, cfg, "fbp", &truth, &recon);
        out.fields.push(("recon_fbp".to_string(), recon));
    }
    finish_report(&mut report, cfg, &truth, started);
    out.report = report;
    finish_step(cfg, out)
}

/// Writes fields (LTFIELD and PGM), the profile CSV, LSQR history, scan data
/// and `report.txt` into `dir`. Returns the written paths.
pub fn emit_outputs(dir: &Path, cfg: &ExperimentConfig, out: &RunOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let bounds = |k: &str| out.report.get(k).and_then(|s| s.parse::<f64>().ok());
    let (lo, hi) = match (bounds("output.pgm_lo"), bounds("output.pgm_hi")) {
        (Some(lo), Some(hi)) if hi > lo => (lo, hi),
        _ => (0.0, 1.0),
    };
    for (name, field) in &out.fields {
        let p = dir.join(format!("{name}.ltf"));
        format::write_field(&p, field)?;
        written.push(p);
        let p = dir.join(format!("{name}.pgm"));
        format::write_pgm(&p, field, lo, hi)?;
        written.push(p);
    }
    let on_grid: Vec<(&str, &ScalarField)> = out
        .fields
        .iter()
        .filter(|(_, f)| *f.grid() == cfg.grid)
        .map(|(n, f)| (n.as_str(), f))
        .collect();
    if !on_grid.is_empty() {
        let p = dir.join("profile.csv");
        format::write_profile_csv(&p, cfg.output.profile_axis, &cfg.output.profile_point, &on_grid)?;
        written.push(p);
    }
    if let Some(history) = &out.lsqr_history {
        let mut csv = String::from("iteration,residual,normal_residual\n");
        for s in history {
            let _ = writeln!(csv, "{},{:?},{:?}", s.iteration, s.residual, s.normal_residual);
        }
        let p = dir.join("lsqr_history.csv");
        fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    if let Some(s) = &out.sinogram {
        let p = dir.join("sinogram.ltf");
        format::write_sinogram(&p, s)?;
        written.push(p);
    }
    if let Some((scan, aps)) = &out.scan {
        written.push(format::write_scan(dir, "scan", scan, aps)?);
    }
    let p = dir.join("report.txt");
    fs::write(&p, out.report.render()).map_err(|e| Error::io(&p, e))?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_echoed() {
        let cfg = ExperimentConfig::from_text("").unwrap();
        for key in [
            "seed",
            "grid.cells",
            "grid.side",
            "medium.mu_s",
            "excitation.half_angle_deg",
            "excitation.taper_deg",
            "noise.photons_per_unit",
            "recon.eps",
            "scan.spot_check",
        ] {
            assert!(cfg.echo.contains_key(key), "{key}");
        }
        assert_eq!(cfg.apertures().unwrap().len(), 10);
        assert_eq!(cfg.grid.cells(), &[128, 128]);
        // k from the tissue parameters
        assert!((cfg.medium.k() - 0.482).abs() < 1e-3, "{}", cfg.medium.k());
    }

    #[test]
    fn config_errors() {
        for text in [
            "grid.dim = 4",
            "unknown.key = 1",
            "medium.mu_s = x",
            "a = 1\na = 2",
            "no equals sign",
            "excitation.kind = xray\nrecon.eps = 0.1",
            "excitation.kind = lines",
            "scan.spot_check = 3",
            "medium.D = 0.2",
            "boundary.file = /nonexistent/h.ltf",
            "phantom.preset = none\nphantom.inclusions = 1",
            "excitation.kind = xray\ngrid.dim = 3\ngrid.cells = 16",
        ] {
            assert!(
                matches!(ExperimentConfig::from_text(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn overrides_and_explicit_axes() {
        let mut raw = RawConfig::parse("grid.cells = 32\nexcitation.axis.0 = 1,0\nexcitation.axis.1 = 0,1").unwrap();
        raw.set("excitation.half_angle_deg=30").unwrap();
        let cfg = ExperimentConfig::from_raw(&raw).unwrap();
        let aps = cfg.apertures().unwrap();
        assert_eq!(aps.len(), 2);
        assert!((aps[0].half_angle() - 30f64.to_radians()).abs() < 1e-15);
        assert!(raw.set("novalue").is_err());
    }

    #[test]
    fn single_cone_is_refused() {
        let cfg = ExperimentConfig::from_text("grid.cells = 32\nexcitation.axes_deg = 0").unwrap();
        assert!(matches!(run_xmlt(&cfg), Err(Error::StabilityViolation { .. })));
        let report = check_stability(&cfg).unwrap();
        assert_eq!(report.get("stability.stable"), Some("false"));
    }

    #[test]
    fn spot_points_lie_inside() {
        let g = Grid::centered(2, 20.0, 32).unwrap();
        let pts = spot_points(&g, 9);
        assert_eq!(pts.len(), 9);
        assert!(pts.iter().all(|p| p[0].abs() <= 5.0 && p[1].abs() <= 5.0));
    }
}
