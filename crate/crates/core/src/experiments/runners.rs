//! Sweep runners for every numerical study. Each runner emits a
//! [`SweepResult`] and records the trends it is expected to show as checks.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{profile_delta, rng_stream};
use crate::cooperation::{apply_self_error, efim_network, efim_time};
use crate::detection::{calibrate_threshold, detection_probability, DetectionConfig};
use crate::error::{Error, Result};
use crate::estimation::{rmse_sweep, GridSpec};
use crate::fisher::{ellipsoid_for_delta, InfoEllipsoid, PositionFim};
use crate::geometry::{Orientation, UpaGeometry, Vec3};
use crate::scenario::{ReceiverNode, Scenario, SnrSpec};

use super::config::ScenarioFile;
use super::output::{Metadata, SweepResult};

/// PEB of `fim`, infinite when some direction carries no information.
fn peb_or_inf(fim: &PositionFim) -> Result<f64> {
    match fim.crlb() {
        Ok(c) => Ok(c.sqrt()),
        Err(Error::SingularMatrix { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Ellipsoid of the first instant pair of receiver `k` (not checked for rank).
fn ellipsoid(s: &Scenario, k: usize) -> Result<InfoEllipsoid> {
    let (minus, plus) = s.optimal_pair(k)?;
    ellipsoid_for_delta(s, k, &profile_delta(&minus, &plus)?)
}

fn single_peb(s: &Scenario, k: usize) -> Result<f64> {
    peb_or_inf(&efim_time(s, k, s.instants)?)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn square_array(like: &UpaGeometry, n: usize) -> Result<UpaGeometry> {
    UpaGeometry::new(n, n, like.spacing, like.layout)
}

fn rel_spread(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    (max - min) / min.abs()
}

fn metadata<P: Serialize>(name: &str, file: &ScenarioFile, params: &P, seed: Option<u64>) -> Result<Metadata> {
    Metadata::new(name, &(file, params), seed)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig4Params {
    pub scales: Vec<f64>,
    pub subcarriers: Vec<usize>,
}

impl Default for Fig4Params {
    fn default() -> Self {
        Self { scales: (1..=10).map(|i| 10.0 * i as f64).collect(), subcarriers: vec![1, 10, 100, 1000] }
    }
}

fn scaled(base: &Scenario, scale: f64) -> Scenario {
    let mut s = base.clone();
    s.tx.position *= scale;
    s.ris.pose.position *= scale;
    s.ris.design_pose.position *= scale;
    for r in &mut s.receivers {
        r.position *= scale;
        r.design_position *= scale;
    }
    s
}

/// Information intensities and PEB of receiver 0 versus scene scale and
/// subcarrier count.
pub fn run_fig4(file: &ScenarioFile) -> Result<SweepResult> {
    let p: Fig4Params = file.sweep_params()?;
    if p.scales.iter().any(|s| !(*s > 0.0)) || p.scales.is_empty() || p.subcarriers.is_empty() {
        return Err(Error::Config("fig4 needs positive scales and at least one subcarrier count".into()));
    }
    let base = file.to_scenario()?;
    let mut out = SweepResult::new(
        metadata("fig4", file, &p, None)?,
        &["scale", "nc", "rii", "aii_az", "aii_el", "peb", "range_share"],
    );
    let points: Vec<(f64, usize)> = p.scales.iter().flat_map(|&sc| p.subcarriers.iter().map(move |&n| (sc, n))).collect();
    let rows: Vec<Vec<f64>> = points
        .par_iter()
        .map(|&(scale, nc)| {
            let mut s = scaled(&base, scale);
            s.waveform.n_subcarriers = nc;
            let e = ellipsoid(&s, 0)?;
            let inv = [1.0 / e.rii, 1.0 / e.aii_az, 1.0 / e.aii_el];
            Ok(vec![scale, nc as f64, e.rii, e.aii_az, e.aii_el, single_peb(&s, 0)?, inv[0] / inv.iter().sum::<f64>()])
        })
        .collect::<Result<_>>()?;
    for r in rows {
        out.push(r)?;
    }

    let col = |name: &str| out.column(name).unwrap_or_default();
    let (scale, nc, rii, az, el, peb, share) = (col("scale"), col("nc"), col("rii"), col("aii_az"), col("aii_el"), col("peb"), col("range_share"));
    let mut worst_rii: f64 = 0.0;
    let mut worst_aii: f64 = 0.0;
    for &n in &p.subcarriers {
        let idx: Vec<usize> = (0..nc.len()).filter(|&i| nc[i] == n as f64).collect();
        worst_rii = worst_rii.max(rel_spread(&idx.iter().map(|&i| rii[i]).collect::<Vec<_>>()));
        for a in [&az, &el] {
            worst_aii = worst_aii.max(rel_spread(&idx.iter().map(|&i| a[i] * scale[i] * scale[i]).collect::<Vec<_>>()));
        }
    }
    out.summary.insert("rii_max_rel_variation".into(), worst_rii);
    out.summary.insert("aii_scale2_max_rel_variation".into(), worst_aii);
    out.check(worst_rii <= 1e-6, || format!("RII varies with scale by {worst_rii:e}"));
    out.check(worst_aii <= 1e-6, || format!("AII * scale^2 varies by {worst_aii:e}"));
    let n_lo = *p.subcarriers.iter().min().unwrap_or(&1) as f64;
    let n_hi = *p.subcarriers.iter().max().unwrap_or(&1) as f64;
    if n_lo < n_hi {
        for &sc in &p.scales {
            let at = |n: f64| (0..nc.len()).find(|&i| nc[i] == n && scale[i] == sc).unwrap_or(0);
            let (lo, hi) = (at(n_lo), at(n_hi));
            out.check(peb[lo] > peb[hi], || format!("scale {sc}: PEB at Nc={n_lo} not above PEB at Nc={n_hi}"));
            out.check(share[lo] > share[hi], || format!("scale {sc}: range share does not fall as Nc grows"));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig5Params {
    pub x_range_m: [f64; 2],
    pub y_range_m: [f64; 2],
    pub points: [usize; 2],
    pub ris_sizes: Vec<usize>,
}

impl Default for Fig5Params {
    fn default() -> Self {
        Self { x_range_m: [-10.0, 10.0], y_range_m: [0.0, 25.0], points: [21, 26], ris_sizes: vec![64, 16] }
    }
}

/// PEB map over receiver positions with the RIS phases designed for the
/// receiver's initial position.
pub fn run_fig5(file: &ScenarioFile) -> Result<SweepResult> {
    let p: Fig5Params = file.sweep_params()?;
    if p.points.iter().any(|&n| n == 0) || p.ris_sizes.is_empty() {
        return Err(Error::Config("fig5 needs non-empty grids".into()));
    }
    let base = file.to_scenario()?;
    let z = base.receivers[0].design_position.z;
    let xs = linspace(p.x_range_m[0], p.x_range_m[1], p.points[0]);
    let ys = linspace(p.y_range_m[0], p.y_range_m[1], p.points[1]);
    let mut out = SweepResult::new(
        metadata("fig5", file, &p, None)?,
        &["ris_size", "x", "y", "peb", "rii", "aii_az", "aii_el"],
    );
    for &m in &p.ris_sizes {
        let mut s = base.clone();
        s.ris.array = square_array(&base.ris.array, m)?;
        let design = single_peb(&s, 0)?;
        let cells: Vec<(f64, f64)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
        let rows: Vec<Vec<f64>> = cells
            .par_iter()
            .map(|&(x, y)| {
                let mut t = s.clone();
                t.receivers[0].position = Vec3::new(x, y, z);
                let e = ellipsoid(&t, 0)?;
                Ok(vec![m as f64, x, y, single_peb(&t, 0)?, e.rii, e.aii_az, e.aii_el])
            })
            .collect::<Result<_>>()?;
        let corners = [(xs[0], ys[0]), (xs[xs.len() - 1], ys[0]), (xs[0], ys[ys.len() - 1]), (xs[xs.len() - 1], ys[ys.len() - 1])];
        let mut pebs: Vec<f64> = rows.iter().map(|r| r[3]).collect();
        for r in &rows {
            if corners.contains(&(r[1], r[2])) {
                out.check(r[3] >= design, || format!("M={m}: corner ({}, {}) PEB below the design-point PEB", r[1], r[2]));
            }
        }
        for r in rows {
            out.push(r)?;
        }
        pebs.sort_by(|a, b| a.total_cmp(b));
        out.summary.insert(format!("design_peb_m{m}"), design);
        out.summary.insert(format!("median_degradation_m{m}"), pebs[pebs.len() / 2] / design);
        out.check(design <= 1e-3, || format!("M={m}: design-point PEB {design:e} m is not millimeter level"));
    }
    let mut sizes = p.ris_sizes.clone();
    sizes.sort_unstable();
    for w in sizes.windows(2) {
        let d = |m: usize| out.summary.get(&format!("median_degradation_m{m}")).copied().unwrap_or(f64::NAN);
        let (small, large) = (d(w[0]), d(w[1]));
        out.check(large >= small, || format!("M={} degrades less off the design point than M={}", w[1], w[0]));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig6Params {
    pub x_range_m: [f64; 2],
    pub y_range_m: [f64; 2],
    pub points: [usize; 2],
    pub orientation_range_deg: [f64; 2],
    pub orientation_points: usize,
}

impl Default for Fig6Params {
    fn default() -> Self {
        Self {
            x_range_m: [-21.0, -19.0],
            y_range_m: [4.0, 6.0],
            points: [21, 21],
            orientation_range_deg: [-2.0, 2.0],
            orientation_points: 21,
        }
    }
}

/// PEB under RIS position and orientation changes with frozen phases.
pub fn run_fig6(file: &ScenarioFile) -> Result<SweepResult> {
    let p: Fig6Params = file.sweep_params()?;
    if p.points.iter().any(|&n| n == 0) || p.orientation_points == 0 {
        return Err(Error::Config("fig6 needs non-empty grids".into()));
    }
    let base = file.to_scenario()?;
    let baseline = single_peb(&base, 0)?;
    let r0 = base.ris.design_pose.position;
    let o0 = base.ris.design_pose.orientation;
    let mut poses = Vec::new();
    for y in linspace(p.y_range_m[0], p.y_range_m[1], p.points[1]) {
        for x in linspace(p.x_range_m[0], p.x_range_m[1], p.points[0]) {
            poses.push((0, Vec3::new(x, y, r0.z), 0.0, 0.0));
        }
    }
    let angles = linspace(p.orientation_range_deg[0], p.orientation_range_deg[1], p.orientation_points);
    poses.extend(angles.iter().map(|&a| (1, r0, a, 0.0)));
    poses.extend(angles.iter().map(|&a| (2, r0, 0.0, a)));
    let rows: Vec<(usize, Vec<f64>)> = poses
        .par_iter()
        .map(|&(group, r, ax, az)| {
            let mut s = base.clone();
            s.ris.pose.position = r;
            s.ris.pose.orientation = Orientation::new(o0.alpha_x + ax.to_radians(), o0.alpha_z + az.to_radians());
            let e = ellipsoid(&s, 0)?;
            let peb = single_peb(&s, 0)?;
            Ok((group, vec![r.x, r.y, ax, az, peb, e.rii, e.aii_az, e.aii_el, peb / baseline]))
        })
        .collect::<Result<_>>()?;
    let mut out = SweepResult::new(
        metadata("fig6", file, &p, None)?,
        &["x_r", "y_r", "alpha_x_deg", "alpha_z_deg", "peb", "rii", "aii_az", "aii_el", "inflation"],
    );
    let mut worst = [0.0f64; 3];
    for (g, r) in rows {
        worst[g] = worst[g].max(r[8]);
        out.push(r)?;
    }
    out.summary.insert("baseline_peb".into(), baseline);
    out.summary.insert("max_inflation_position".into(), worst[0]);
    out.summary.insert("max_inflation_alpha_x".into(), worst[1]);
    out.summary.insert("max_inflation_alpha_z".into(), worst[2]);
    out.check(worst[1] <= worst[2], || {
        format!("rotation about x inflates the PEB ({:.4}) more than rotation about z ({:.4})", worst[1], worst[2])
    });
    Ok(out)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeployParams {
    /// Any of `type_i`, `type_ii`, `custom`.
    pub plans: Vec<String>,
    pub spacing_m: f64,
    pub max_receivers: usize,
}

impl Default for DeployParams {
    fn default() -> Self {
        Self { plans: vec!["type_i".into(), "type_ii".into()], spacing_m: 20.0, max_receivers: 5 }
    }
}

/// Receiver positions of a deployment plan. Type I continues the line from
/// the RIS ground projection through the first receiver; type II runs along
/// the positive y axis.
pub fn deployment_positions(base: &Scenario, plan: &str, spacing: f64, count: usize) -> Result<Vec<Vec3>> {
    let first = base.receivers[0].position;
    let step = match plan {
        "type_i" => {
            let r = base.ris.pose.position;
            let d = Vec3::new(first.x - r.x, first.y - r.y, 0.0);
            if d.norm() == 0.0 {
                return Err(Error::Config("type_i needs the receiver off the RIS ground projection".into()));
            }
            d.normalize()
        }
        "type_ii" => Vec3::y(),
        "custom" => return Ok(base.receivers.iter().take(count).map(|r| r.position).collect()),
        other => return Err(Error::Config(format!("unknown deployment plan {other:?}"))),
    };
    Ok((0..count).map(|i| first + step * (spacing * i as f64)).collect())
}

fn network_of(base: &Scenario, positions: &[Vec3], error_cov: Matrix3<f64>) -> Scenario {
    let array = base.receivers[0].array.clone();
    let mut s = base.clone();
    s.receivers = positions.iter().map(|p| ReceiverNode::anchor(*p, array.clone()).with_error(error_cov)).collect();
    s
}

/// Network PEB versus the number of cooperating receivers for each plan.
pub fn run_deployment(file: &ScenarioFile) -> Result<SweepResult> {
    let p: DeployParams = file.sweep_params()?;
    if p.plans.is_empty() || p.max_receivers == 0 || !(p.spacing_m > 0.0) {
        return Err(Error::Config("deploy needs plans, max_receivers >= 1 and spacing_m > 0".into()));
    }
    let base = file.to_scenario()?;
    let columns: Vec<String> = std::iter::once("k".to_string()).chain(p.plans.iter().map(|n| format!("peb_{n}"))).collect();
    let refs: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut out = SweepResult::new(metadata("deploy", file, &p, None)?, &refs);
    let curves: Vec<Vec<f64>> = p
        .plans
        .iter()
        .map(|plan| {
            let pos = deployment_positions(&base, plan, p.spacing_m, p.max_receivers)?;
            (1..=p.max_receivers)
                .into_par_iter()
                .map(|k| match pos.get(..k) {
                    Some(sub) => peb_or_inf(&efim_network(&network_of(&base, sub, Matrix3::zeros()))?),
                    None => Ok(f64::NAN),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    for k in 0..p.max_receivers {
        out.push(std::iter::once((k + 1) as f64).chain(curves.iter().map(|c| c[k])).collect())?;
    }
    for (plan, c) in p.plans.iter().zip(&curves) {
        for k in 1..c.len() {
            if c[k].is_finite() {
                out.check(c[k] <= c[k - 1], || format!("{plan}: PEB increases from k={k} to k={}", k + 1));
            }
        }
    }
    let find = |name: &str| p.plans.iter().position(|n| n == name).map(|i| &curves[i]);
    if let (Some(a), Some(b)) = (find("type_i"), find("type_ii")) {
        out.check(a[0] == b[0], || "type_i and type_ii differ at k=1".into());
        for k in 0..a.len() {
            out.check(b[k] <= a[k] * (1.0 + 1e-12), || format!("k={}: type_ii PEB above type_i", k + 1));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfErrorParams {
    pub level_names: Vec<String>,
    pub level_std_m: Vec<f64>,
    pub max_receivers: usize,
    pub radius_m: f64,
    pub realizations: usize,
}

impl Default for SelfErrorParams {
    fn default() -> Self {
        Self {
            level_names: ["m", "dm", "cm", "mm"].map(String::from).to_vec(),
            level_std_m: vec![1.0, 0.1, 0.01, 0.001],
            max_receivers: 6,
            radius_m: 20.0,
            realizations: 200,
        }
    }
}

fn mean_ci(v: &[f64]) -> (f64, f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let h = 1.96 * (var / n).sqrt();
    (mean, mean - h, mean + h)
}

/// Mean network PEB over random receiver placements for each
/// self-positioning error level, with the perfectly known network as baseline.
pub fn run_self_error(file: &ScenarioFile, seed: u64) -> Result<SweepResult> {
    let p: SelfErrorParams = file.sweep_params()?;
    if p.level_names.len() != p.level_std_m.len() || p.level_std_m.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Config("level_names and level_std_m must pair up with std >= 0".into()));
    }
    if p.max_receivers == 0 || p.realizations < 2 || !(p.radius_m > 0.0) {
        return Err(Error::Config("selferr needs max_receivers >= 1, realizations >= 2, radius_m > 0".into()));
    }
    let base = file.to_scenario()?;
    let n_levels = p.level_std_m.len();
    // per realization: [k][level + anchor] PEB
    let draws: Vec<Vec<Vec<f64>>> = (0..p.realizations)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_stream(seed, r as u64, 0, 0);
            let pos: Vec<Vec3> = (0..p.max_receivers)
                .map(|_| {
                    let rho = p.radius_m * rng.random::<f64>().sqrt();
                    let phi = 2.0 * PI * rng.random::<f64>();
                    Vec3::new(rho * phi.cos(), rho * phi.sin(), 0.0)
                })
                .collect();
            let net = network_of(&base, &pos, Matrix3::zeros());
            let fe: Vec<Matrix3<f64>> = (0..pos.len()).map(|k| Ok(efim_time(&net, k, net.instants)?.matrix)).collect::<Result<_>>()?;
            let per_level: Vec<Vec<Matrix3<f64>>> = p
                .level_std_m
                .iter()
                .map(|s| fe.iter().map(|f| apply_self_error(f, &(Matrix3::identity() * (s * s)))).collect())
                .collect::<Result<_>>()?;
            (1..=pos.len())
                .map(|k| {
                    let mut row = Vec::with_capacity(n_levels + 1);
                    row.push(peb_or_inf(&PositionFim { matrix: fe[..k].iter().sum() })?);
                    for lv in &per_level {
                        row.push(peb_or_inf(&PositionFim { matrix: lv[..k].iter().sum() })?);
                    }
                    Ok(row)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut columns = vec!["k".to_string(), "peb_anchor".into(), "peb_anchor_lo".into(), "peb_anchor_hi".into()];
    for n in &p.level_names {
        columns.extend([format!("peb_{n}"), format!("peb_{n}_lo"), format!("peb_{n}_hi")]);
    }
    let refs: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut out = SweepResult::new(metadata("selferr", file, &p, Some(seed))?, &refs);
    let mut stats = vec![vec![(0.0, 0.0, 0.0); n_levels + 1]; p.max_receivers];
    for k in 0..p.max_receivers {
        let mut row = vec![(k + 1) as f64];
        for j in 0..=n_levels {
            let v: Vec<f64> = draws.iter().map(|d| d[k][j]).collect();
            stats[k][j] = mean_ci(&v);
            row.extend([stats[k][j].0, stats[k][j].1, stats[k][j].2]);
        }
        out.push(row)?;
    }

    let mut order: Vec<usize> = (0..n_levels).collect();
    order.sort_by(|&a, &b| p.level_std_m[b].total_cmp(&p.level_std_m[a]));
    for k in 0..p.max_receivers {
        for w in order.windows(2) {
            let (big, small) = (stats[k][w[0] + 1].0, stats[k][w[1] + 1].0);
            out.check(big >= small, || {
                format!("k={}: {} level PEB below {} level PEB", k + 1, p.level_names[w[0]], p.level_names[w[1]])
            });
        }
        for j in 0..n_levels {
            out.check(stats[k][j + 1].0 >= stats[k][0].0, || format!("k={}: {} level beats the anchors", k + 1, p.level_names[j]));
        }
    }
    let reference = stats[0][0];
    for (j, name) in p.level_names.iter().enumerate() {
        let k = (0..p.max_receivers).find(|&k| stats[k][j + 1].0 <= reference.0).map_or(f64::INFINITY, |k| (k + 1) as f64);
        out.summary.insert(format!("crossing_k_{name}"), k);
    }
    if let (Some(&finest), true) = (order.last(), p.max_receivers >= 3) {
        let name = &p.level_names[finest];
        let lo3 = stats[2][finest + 1].1;
        out.check(lo3 <= reference.2, || {
            format!("{name} level with 3 receivers ({lo3:e} m lower CI) stays above one perfect receiver ({:e} m upper CI)", reference.2)
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct DetectionPoint {
    sweep: usize,
    ris: usize,
    rx: usize,
    instants: usize,
    snr_db: f64,
    deformation: f64,
}

const DETECTION_COLUMNS: [&str; 11] =
    ["sweep", "ris_size", "rx_size", "instants", "snr_db", "deformation_m", "p_detect", "p_lo", "p_hi", "threshold", "peb"];

fn with_snr(snr: SnrSpec, db: f64) -> SnrSpec {
    match snr {
        SnrSpec::PerAntennaDb(_) => SnrSpec::PerAntennaDb(db),
        _ => SnrSpec::ElementDb(db),
    }
}

fn snr_db_of(s: &Scenario) -> Result<f64> {
    match s.snr {
        SnrSpec::PerAntennaDb(d) | SnrSpec::ElementDb(d) => Ok(d),
        SnrSpec::Gain { .. } => Err(Error::Config("detection sweeps need an SNR in dB, not an explicit gain".into())),
    }
}

fn run_detection_points(base: &Scenario, config: &DetectionConfig, points: &[DetectionPoint], seed: u64) -> Result<Vec<Vec<f64>>> {
    let dir = config.deformation.try_normalize(0.0).ok_or_else(|| Error::Config("deformation direction is zero".into()))?;
    points
        .par_iter()
        .map(|pt| {
            let mut s = base.clone();
            s.ris.array = square_array(&base.ris.array, pt.ris)?;
            for r in &mut s.receivers {
                r.array = square_array(&base.receivers[0].array, pt.rx)?;
            }
            s.instants = pt.instants;
            s.snr = with_snr(base.snr, pt.snr_db);
            let threshold = calibrate_threshold(config, &s, seed)?;
            let est = detection_probability(&s, &(dir * pt.deformation), config, threshold, seed)?;
            let peb = peb_or_inf(&efim_network(&s)?)?;
            Ok(vec![
                pt.sweep as f64,
                pt.ris as f64,
                pt.rx as f64,
                pt.instants as f64,
                pt.snr_db,
                pt.deformation,
                est.p,
                est.lo,
                est.hi,
                threshold,
                peb,
            ])
        })
        .collect()
}

/// Flags each step along a one-factor path where detection gets clearly worse.
fn check_monotone(out: &mut SweepResult, rows: &[Vec<f64>], what: &str) {
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        out.check(b[8] >= a[7], || format!("p_detect drops along {what}: {:.4} -> {:.4}", a[6], b[6]));
    }
}

fn find_row<'a>(rows: &'a [Vec<f64>], f: impl Fn(&[f64]) -> bool) -> Option<&'a Vec<f64>> {
    rows.iter().find(|r| f(r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Detect9Params {
    pub rx_sizes: Vec<usize>,
    pub ris_sizes: Vec<usize>,
    pub instants: Vec<usize>,
}

impl Default for Detect9Params {
    fn default() -> Self {
        Self { rx_sizes: vec![4, 8, 16, 32, 64, 128], ris_sizes: vec![4, 8, 16, 32, 64], instants: vec![2, 10, 100, 1000, 2240] }
    }
}

/// Detection probability along three one-factor sweeps from the file's
/// operating point: receive antennas (sweep 0), RIS size (1), instants (2).
pub fn run_detect9(file: &ScenarioFile, seed: u64) -> Result<SweepResult> {
    let p: Detect9Params = file.sweep_params()?;
    let base = file.to_scenario()?;
    let config = file.detection_config()?;
    let (ris0, rx0, t0, snr0) = (base.ris.array.n_az, base.receivers[0].array.n_az, base.instants, snr_db_of(&base)?);
    let d0 = config.deformation.norm();
    let pt = |sweep, ris, rx, instants| DetectionPoint { sweep, ris, rx, instants, snr_db: snr0, deformation: d0 };
    let mut points: Vec<DetectionPoint> = p.rx_sizes.iter().map(|&n| pt(0, ris0, n, t0)).collect();
    points.extend(p.ris_sizes.iter().map(|&m| pt(1, m, rx0, t0)));
    points.extend(p.instants.iter().map(|&t| pt(2, ris0, rx0, t)));
    let rows = run_detection_points(&base, &config, &points, seed)?;
    let mut out = SweepResult::new(metadata("detect9", file, &(&p, &config), Some(seed))?, &DETECTION_COLUMNS);
    for (sweep, what) in [(0.0, "receive antennas"), (1.0, "RIS size"), (2.0, "instants")] {
        let mut sub: Vec<Vec<f64>> = rows.iter().filter(|r| r[0] == sweep).cloned().collect();
        let key = [2usize, 1, 3][sweep as usize];
        sub.sort_by(|a, b| a[key].total_cmp(&b[key]));
        check_monotone(&mut out, &sub, what);
        if let Some(r) = sub.iter().find(|r| r[6] >= 0.99) {
            out.summary.insert(format!("first_certain_{}", ["rx_size", "ris_size", "instants"][sweep as usize]), r[key]);
        }
    }
    if let Some(r) = find_row(&rows, |r| r[0] == 0.0 && r[1] == 16.0 && r[2] == 128.0) {
        out.summary.insert("p_ris16_rx128".into(), r[6]);
        out.check(r[6] >= 0.99, || format!("16x16 RIS with 128x128 antennas: p_detect {} < 0.99", r[6]));
    }
    if let Some(r) = find_row(&rows, |r| r[0] == 2.0 && r[1] == 16.0 && r[2] == 8.0 && r[3] == 2240.0) {
        out.summary.insert("p_ris16_rx8_t2240".into(), r[6]);
        out.check(r[6] >= 0.99, || format!("16x16 RIS, 8x8 antennas, T=2240: p_detect {} < 0.99", r[6]));
    }
    for r in rows {
        out.push(r)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Detect10Params {
    pub snr_db: Vec<f64>,
    pub ris_sizes: Vec<usize>,
    pub deformation_m: Vec<f64>,
}

impl Default for Detect10Params {
    fn default() -> Self {
        Self { snr_db: vec![-20.0, -10.0, 0.0, 10.0, 20.0], ris_sizes: vec![4, 16, 64], deformation_m: vec![1e-3, 1e-2, 1e-1, 1.0] }
    }
}

/// Detection probability on the full SNR x RIS size x deformation grid.
pub fn run_detect10(file: &ScenarioFile, seed: u64) -> Result<SweepResult> {
    let p: Detect10Params = file.sweep_params()?;
    let base = file.to_scenario()?;
    let config = file.detection_config()?;
    let (rx0, t0) = (base.receivers[0].array.n_az, base.instants);
    let mut points = Vec::new();
    for &m in &p.ris_sizes {
        for &snr in &p.snr_db {
            for &d in &p.deformation_m {
                points.push(DetectionPoint { sweep: 3, ris: m, rx: rx0, instants: t0, snr_db: snr, deformation: d });
            }
        }
    }
    let rows = run_detection_points(&base, &config, &points, seed)?;
    let mut out = SweepResult::new(metadata("detect10", file, &(&p, &config), Some(seed))?, &DETECTION_COLUMNS);
    // One-factor paths through the grid: vary column `var`, hold the other two.
    for (var, others, what) in [(4usize, [1usize, 5], "SNR"), (1, [4, 5], "RIS size"), (5, [1, 4], "deformation")] {
        let mut groups: Vec<Vec<Vec<f64>>> = Vec::new();
        for r in &rows {
            match groups.iter_mut().find(|g| others.iter().all(|&o| g[0][o] == r[o])) {
                Some(g) => g.push(r.clone()),
                None => groups.push(vec![r.clone()]),
            }
        }
        for mut g in groups {
            g.sort_by(|a, b| a[var].total_cmp(&b[var]));
            check_monotone(&mut out, &g, what);
        }
    }
    if let Some(r) = find_row(&rows, |r| r[1] == 4.0 && r[4] == -20.0 && r[5] == 1.0) {
        out.summary.insert("p_ris4_snr-20_1m".into(), r[6]);
        out.check(r[6] >= 0.99, || format!("4x4 RIS at -20 dB with 1 m deformation: p_detect {} < 0.99", r[6]));
    }
    if let Some(r) = find_row(&rows, |r| r[1] == 64.0 && r[4] == 20.0 && r[5] == 1e-3) {
        out.summary.insert("p_ris64_snr20_1mm".into(), r[6]);
    }
    for r in rows {
        out.push(r)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rmse7Params {
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub grid: GridSpec,
}

impl Default for Rmse7Params {
    fn default() -> Self {
        Self { snr_db: (0..9).map(|i| -10.0 + 5.0 * i as f64).collect(), trials: 500, grid: GridSpec::default() }
    }
}

/// Estimation RMSE of receiver 0 against the CRLB over an SNR sweep.
pub fn run_rmse7(file: &ScenarioFile, seed: u64) -> Result<SweepResult> {
    let p: Rmse7Params = file.sweep_params()?;
    if p.trials < 100 {
        return Err(Error::Config(format!("rmse7 needs at least 100 trials, got {}", p.trials)));
    }
    p.grid.validate().map_err(|e| Error::Config(e.to_string()))?;
    let base = file.to_scenario()?;
    let rows = rmse_sweep(&base, &p.snr_db, p.trials, seed, &p.grid)?;
    let mut out = SweepResult::new(
        metadata("rmse7", file, &p, Some(seed))?,
        &[
            "snr_db", "rmse_tau", "rmse_az", "rmse_el", "crlb_tau", "crlb_az", "crlb_el", "bias_tau", "bias_az", "bias_el",
            "mse_tau_lo", "mse_tau_hi", "mse_az_lo", "mse_az_hi", "mse_el_lo", "mse_el_hi", "converged_fraction", "trials",
        ],
    );
    let band = 10f64.powf(3.0 / 20.0);
    for r in &rows {
        let per = [
            ("delay", r.rmse_tau, r.crlb_tau, r.mse_ci_tau),
            ("azimuth", r.rmse_az, r.crlb_az, r.mse_ci_az),
            ("elevation", r.rmse_el, r.crlb_el, r.mse_ci_el),
        ];
        for (name, rmse, crlb, ci) in per {
            if r.snr_db >= 20.0 {
                out.check(rmse <= crlb * band, || format!("{} dB {name}: RMSE {rmse:e} more than 3 dB above CRLB {crlb:e}", r.snr_db));
            }
            out.check(ci.1.sqrt() >= crlb, || format!("{} dB {name}: RMSE CI {:e} below CRLB {crlb:e}", r.snr_db, ci.1.sqrt()));
        }
        out.push(vec![
            r.snr_db,
            r.rmse_tau,
            r.rmse_az,
            r.rmse_el,
            r.crlb_tau,
            r.crlb_az,
            r.crlb_el,
            r.bias_tau,
            r.bias_az,
            r.bias_el,
            r.mse_ci_tau.0,
            r.mse_ci_tau.1,
            r.mse_ci_az.0,
            r.mse_ci_az.1,
            r.mse_ci_el.0,
            r.mse_ci_el.1,
            r.converged_fraction,
            r.trials as f64,
        ])?;
    }
    Ok(out)
}
