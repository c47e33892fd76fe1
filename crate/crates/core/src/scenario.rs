//! Experiment description and synthetic data.
//!
//! Scenario files are plain text: `[section]` headers followed by
//! `key = value` lines; `#` starts a comment. Vectors are comma-separated.
//! Every key is optional and falls back to the default experiment.
//!
//! ```text
//! [grid]
//! background_levels = 7      # 2^7 x 2^7 cells for state and adjoint
//! initial_level = 4          # uniform starting parameter mesh
//! truth_cells = 192          # grid used to synthesize data
//! [physics]
//! diffusion = 1.0
//! wind = 100.0, 0.0
//! [inverse]
//! beta = 10000.0
//! noise_fraction = 0.1       # sigma = noise_fraction * max |u*|
//! [detectors]
//! ring = 0.2, 50             # radius, count; repeatable
//! ring = 0.6, 50
//! [source]
//! center = -0.25, 0.0
//! radius = 0.2
//! amplitude = 1.0
//! [refinement]
//! fraction = 0.3
//! cycles = 3
//! spectrum_limit = 5000
//! [run]
//! seed = 42
//! output = run
//! allow_inverse_crime = false
//! ```

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::fem::{assemble_operator, factorize, load_vector, MeasurementSet, Quadrature, ScalarField, SparseOperator};
use crate::inverse::InverseProblem;
use crate::mesh::{QuadtreeMesh, UniformGrid};

/// Finest background resolution accepted from a scenario file.
pub const MAX_LEVELS: u32 = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ring {
    pub radius: f64,
    pub count: usize,
}

/// Constant disc source.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceSpec {
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: f64,
}

impl SourceSpec {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        if dx * dx + dy * dy < self.radius * self.radius {
            self.amplitude
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub background_levels: u32,
    pub initial_level: u32,
    pub truth_cells: usize,
    pub diffusion: f64,
    pub wind: [f64; 2],
    pub beta: f64,
    pub noise_fraction: f64,
    pub rings: Vec<Ring>,
    pub source: SourceSpec,
    pub fraction: f64,
    pub cycles: usize,
    pub spectrum_limit: usize,
    pub seed: u64,
    pub output: String,
    pub allow_inverse_crime: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            background_levels: 7,
            initial_level: 4,
            truth_cells: 192,
            diffusion: 1.0,
            wind: [100.0, 0.0],
            beta: 1e4,
            noise_fraction: 0.1,
            rings: vec![Ring { radius: 0.2, count: 50 }, Ring { radius: 0.6, count: 50 }],
            source: SourceSpec {
                center: [-0.25, 0.0],
                radius: 0.2,
                amplitude: 1.0,
            },
            fraction: 0.3,
            cycles: 3,
            spectrum_limit: 5000,
            seed: 42,
            output: "run".to_string(),
            allow_inverse_crime: false,
        }
    }
}

fn scenario_err(line: usize, message: impl Into<String>) -> Error {
    Error::Scenario {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| scenario_err(line, format!("cannot parse '{}' for '{key}'", v.trim())))
}

fn parse_pair(line: usize, key: &str, v: &str) -> Result<[f64; 2]> {
    let parts: Vec<&str> = v.split(',').collect();
    if parts.len() != 2 {
        return Err(scenario_err(
            line,
            format!("'{key}' expects two comma-separated numbers"),
        ));
    }
    Ok([parse_num(line, key, parts[0])?, parse_num(line, key, parts[1])?])
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Scenario::default();
        let mut section = String::new();
        let mut rings_seen = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| scenario_err(line, "unterminated section header"))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| scenario_err(line, format!("expected 'key = value', got '{content}'")))?;
            let (key, value) = (key.trim(), value.trim());
            match (section.as_str(), key) {
                ("grid", "background_levels") => s.background_levels = parse_num(line, key, value)?,
                ("grid", "initial_level") => s.initial_level = parse_num(line, key, value)?,
                ("grid", "truth_cells") => s.truth_cells = parse_num(line, key, value)?,
                ("physics", "diffusion") => s.diffusion = parse_num(line, key, value)?,
                ("physics", "wind") => s.wind = parse_pair(line, key, value)?,
                ("inverse", "beta") => s.beta = parse_num(line, key, value)?,
                ("inverse", "noise_fraction") => s.noise_fraction = parse_num(line, key, value)?,
                ("detectors", "ring") => {
                    if !rings_seen {
                        s.rings.clear();
                        rings_seen = true;
                    }
                    let (r, c) = value
                        .split_once(',')
                        .ok_or_else(|| scenario_err(line, "'ring' expects 'radius, count'"))?;
                    s.rings.push(Ring {
                        radius: parse_num(line, key, r)?,
                        count: parse_num(line, key, c)?,
                    });
                }
                ("source", "center") => s.source.center = parse_pair(line, key, value)?,
                ("source", "radius") => s.source.radius = parse_num(line, key, value)?,
                ("source", "amplitude") => s.source.amplitude = parse_num(line, key, value)?,
                ("refinement", "fraction") => s.fraction = parse_num(line, key, value)?,
                ("refinement", "cycles") => s.cycles = parse_num(line, key, value)?,
                ("refinement", "spectrum_limit") => s.spectrum_limit = parse_num(line, key, value)?,
                ("run", "seed") => s.seed = parse_num(line, key, value)?,
                ("run", "output") => s.output = value.to_string(),
                ("run", "allow_inverse_crime") => s.allow_inverse_crime = parse_num(line, key, value)?,
                _ => {
                    return Err(scenario_err(
                        line,
                        format!("unknown key '{key}' in section [{section}]"),
                    ))
                }
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Text form accepted by [`Scenario::parse`]; floats use Rust's
    /// shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(t, "[grid]");
        let _ = writeln!(t, "background_levels = {}", self.background_levels);
        let _ = writeln!(t, "initial_level = {}", self.initial_level);
        let _ = writeln!(t, "truth_cells = {}", self.truth_cells);
        let _ = writeln!(t, "\n[physics]");
        let _ = writeln!(t, "diffusion = {:?}", self.diffusion);
        let _ = writeln!(t, "wind = {:?}, {:?}", self.wind[0], self.wind[1]);
        let _ = writeln!(t, "\n[inverse]");
        let _ = writeln!(t, "beta = {:?}", self.beta);
        let _ = writeln!(t, "noise_fraction = {:?}", self.noise_fraction);
        let _ = writeln!(t, "\n[detectors]");
        for r in &self.rings {
            let _ = writeln!(t, "ring = {:?}, {}", r.radius, r.count);
        }
        let _ = writeln!(t, "\n[source]");
        let _ = writeln!(t, "center = {:?}, {:?}", self.source.center[0], self.source.center[1]);
        let _ = writeln!(t, "radius = {:?}", self.source.radius);
        let _ = writeln!(t, "amplitude = {:?}", self.source.amplitude);
        let _ = writeln!(t, "\n[refinement]");
        let _ = writeln!(t, "fraction = {:?}", self.fraction);
        let _ = writeln!(t, "cycles = {}", self.cycles);
        let _ = writeln!(t, "spectrum_limit = {}", self.spectrum_limit);
        let _ = writeln!(t, "\n[run]");
        let _ = writeln!(t, "seed = {}", self.seed);
        let _ = writeln!(t, "output = {}", self.output);
        let _ = writeln!(t, "allow_inverse_crime = {}", self.allow_inverse_crime);
        t
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(scenario_err(0, m));
        if self.background_levels == 0 || self.background_levels > MAX_LEVELS {
            return bad(format!("background_levels must lie in 1..={MAX_LEVELS}"));
        }
        if self.initial_level > self.background_levels {
            return bad("initial_level exceeds background_levels".into());
        }
        if self.truth_cells < 2 || self.truth_cells > 1 << MAX_LEVELS {
            return bad(format!("truth_cells must lie in 2..={}", 1 << MAX_LEVELS));
        }
        if !(self.diffusion > 0.0) || !self.diffusion.is_finite() {
            return bad("diffusion must be positive".into());
        }
        if !self.wind.iter().all(|w| w.is_finite()) {
            return bad("wind must be finite".into());
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad("beta must be >= 0".into());
        }
        if !(self.noise_fraction >= 0.0) || !self.noise_fraction.is_finite() {
            return bad("noise_fraction must be >= 0".into());
        }
        for r in &self.rings {
            // every point of a centered ring of radius < 1 is strictly inside
            if !(r.radius > 0.0 && r.radius < 1.0) || r.count == 0 {
                return bad(format!(
                    "ring ({}, {}) must have radius in (0, 1) and count >= 1",
                    r.radius, r.count
                ));
            }
        }
        if !(self.source.radius > 0.0) || !self.source.amplitude.is_finite() {
            return bad("source radius must be positive and amplitude finite".into());
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad("fraction must lie in (0, 1]".into());
        }
        if self.output.is_empty() {
            return bad("output must not be empty".into());
        }
        Ok(())
    }

    /// Detectors at angles `2 pi i / count` on each ring.
    pub fn detector_points(&self) -> Vec<[f64; 2]> {
        self.rings
            .iter()
            .flat_map(|r| {
                (0..r.count).map(move |i| {
                    let a = 2.0 * PI * i as f64 / r.count as f64;
                    [r.radius * a.cos(), r.radius * a.sin()]
                })
            })
            .collect()
    }

    pub fn detector_count(&self) -> usize {
        self.rings.iter().map(|r| r.count).sum()
    }

    pub fn workbench_grid(&self) -> UniformGrid {
        UniformGrid::from_levels(self.background_levels)
    }

    pub fn truth_grid(&self) -> Result<UniformGrid> {
        UniformGrid::with_cells(self.truth_cells)
    }

    pub fn initial_mesh(&self) -> Result<QuadtreeMesh> {
        QuadtreeMesh::uniform(self.initial_level, self.background_levels)
    }

    pub fn operator(&self, grid: &UniformGrid) -> Result<SparseOperator> {
        assemble_operator(grid, self.diffusion, self.wind)
    }

    /// `|b| L / D` with `L` the side of the domain.
    pub fn problem_peclet(&self) -> f64 {
        crate::fem::problem_peclet(self.diffusion, self.wind)
    }

    /// Forward solve with the true source on the truth grid.
    pub fn solve_truth(&self) -> Result<ScalarField> {
        let workbench = self.workbench_grid().cells_per_side();
        if self.truth_cells == workbench && !self.allow_inverse_crime {
            return Err(Error::InverseCrime { cells: workbench });
        }
        let grid = self.truth_grid()?;
        let op = self.operator(&grid)?;
        let src = self.source;
        let rhs = load_vector(&grid, |x, y| src.value(x, y), Quadrature::Midpoint(4));
        factorize(&op)?.solve(&rhs)
    }

    /// Noisy point values of the truth at the detectors.
    pub fn synthesize(&self, truth: &ScalarField, seed: u64) -> Result<SyntheticData> {
        let points = self.detector_points();
        let clean = points
            .iter()
            .map(|p| {
                truth
                    .evaluate(p[0], p[1])
                    .ok_or_else(|| Error::InvalidArgument(format!("detector ({}, {}) outside the domain", p[0], p[1])))
            })
            .collect::<Result<Vec<f64>>>()?;
        let max_u = truth.max_abs();
        let sigma = self.noise_fraction * max_u;
        let noise = gaussian_samples(seed, points.len());
        let values = clean.iter().zip(&noise).map(|(c, e)| c + sigma * e).collect();
        Ok(SyntheticData {
            points,
            clean,
            values,
            sigma,
            max_u,
        })
    }

    /// Operator, detectors and adjoints on the workbench grid, optionally
    /// carrying data.
    pub fn inverse_problem(&self, sigma: f64, data: Option<Vec<f64>>) -> Result<InverseProblem> {
        let grid = self.workbench_grid();
        let op = self.operator(&grid)?;
        let handle = factorize(&op)?;
        let pts = self.detector_points();
        let n = pts.len();
        let mut ms = MeasurementSet::new(pts, vec![sigma; n])?;
        if let Some(z) = data {
            ms = ms.with_values(z)?;
        }
        InverseProblem::new(handle, ms, self.beta)
    }
}

/// Synthetic measurements `z = u*(xi) + sigma * e` with standard normal `e`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub points: Vec<[f64; 2]>,
    pub clean: Vec<f64>,
    pub values: Vec<f64>,
    pub sigma: f64,
    pub max_u: f64,
}

impl SyntheticData {
    pub fn measurements(&self) -> Result<MeasurementSet> {
        MeasurementSet::new(self.points.clone(), vec![self.sigma; self.points.len()])?.with_values(self.values.clone())
    }
}

/// Uniform double in `[0, 1)` from the top 53 bits.
fn unit(rng: &mut Xoshiro256PlusPlus) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `n` standard normal draws: xoshiro256++ seeded through SplitMix64
/// (`seed_from_u64`), Box-Muller on `(1 - u1, u2)`, both outputs of each
/// pair used in order (cosine first).
pub fn gaussian_samples(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let u1 = 1.0 - unit(&mut rng);
        let u2 = unit(&mut rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let t = 2.0 * PI * u2;
        out.push(r * t.cos());
        out.push(r * t.sin());
    }
    out.truncate(n);
    out
}
