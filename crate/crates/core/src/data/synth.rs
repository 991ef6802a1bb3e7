use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::series::parse_timestamp;
use super::{DataError, LmpSeries, ProfileSeries, SyntheticParams};
use crate::grid::{FeederSpec, LineSpec, NodeKind, NodeSpec};

/// How one node's injection is split among its DCAs: the first `n_gen` are
/// generators, the rest loads, and the last DCA takes the remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct DcaSplit {
    pub n_gen: usize,
    /// Share γ of |node injection| for every DCA but the last.
    pub shares: Vec<f64>,
}

impl DcaSplit {
    pub fn draw<R: Rng>(n: usize, share: (f64, f64), rng: &mut R) -> Self {
        assert!(n >= 1, "a node needs at least one DCA");
        let n_gen = if n >= 2 { rng.random_range(1..n) } else { 0 };
        let shares = (0..n - 1).map(|_| rng.random_range(share.0..=share.1)).collect();
        Self { n_gen, shares }
    }

    pub fn len(&self) -> usize {
        self.shares.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_generator(&self, j: usize) -> bool {
        j < self.n_gen
    }

    /// Baselines summing to `(p, q)`.
    pub fn apply(&self, p: f64, q: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.len());
        let (mut sp, mut sq) = (0.0, 0.0);
        for (j, g) in self.shares.iter().enumerate() {
            let sign = if self.is_generator(j) { 1.0 } else { -1.0 };
            let (dp, dq) = (sign * g * p.abs(), sign * g * q.abs());
            sp += dp;
            sq += dq;
            out.push((dp, dq));
        }
        out.push((p - sp, q - sq));
        out
    }
}

/// Splits a node injection among `n` DCAs, each tagged generator or load.
///
/// ```
/// use lem_core::data::disaggregate_node;
/// use rand::SeedableRng;
/// let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
/// let parts = disaggregate_node(-30.0, -9.0, 3, &mut rng);
/// let total: f64 = parts.iter().map(|p| p.0).sum();
/// assert!((total + 30.0).abs() < 1e-12);
/// ```
pub fn disaggregate_node<R: Rng>(p: f64, q: f64, n: usize, rng: &mut R) -> Vec<(f64, f64)> {
    DcaSplit::draw(n, (0.1, 0.5), rng).apply(p, q)
}

/// `[P⁰(1 − Δ̲), P⁰(1 + Δ̄)]`, with the endpoints swapped for negative baselines.
///
/// ```
/// use lem_core::data::flex_interval;
/// let (lo, hi) = flex_interval(-10.0, 0.2, 0.4);
/// assert!((lo + 14.0).abs() < 1e-12 && (hi + 8.0).abs() < 1e-12);
/// ```
pub fn flex_interval(p0: f64, d_lo: f64, d_hi: f64) -> (f64, f64) {
    let a = p0 * (1.0 - d_lo);
    let b = p0 * (1.0 + d_hi);
    (a.min(b), a.max(b))
}

/// Draws independent fractions in `[0, cap]` for the four endpoints and
/// returns `(P_lo, P_hi, Q_lo, Q_hi)`.
pub fn gen_flexibility_bids<R: Rng>(p0: f64, q0: f64, rng: &mut R, cap: f64) -> (f64, f64, f64, f64) {
    let mut d = || rng.random_range(0.0..=cap);
    let (pl, ph) = flex_interval(p0, d(), d());
    let (ql, qh) = flex_interval(q0, d(), d());
    (pl, ph, ql, qh)
}

#[derive(Debug, Clone)]
pub struct SyntheticFeeder {
    pub feeder: FeederSpec,
    pub profiles: ProfileSeries,
    pub lmp: LmpSeries,
    pub pv_nameplate_kw: BTreeMap<usize, f64>,
    /// Coincident peak of the load component, kW.
    pub peak_load_kw: f64,
}

fn bump(h: f64, centre: f64, width: f64) -> f64 {
    (-((h - centre) / width).powi(2)).exp()
}

/// Residential double-peak daily shape, roughly in [0.4, 1].
fn load_shape(h: f64) -> f64 {
    let h = h.rem_euclid(24.0);
    0.4 + 0.3 * bump(h, 8.0, 1.5) + 0.55 * bump(h, 19.0, 2.0) + 0.55 * bump(h, -5.0, 2.0)
}

fn pv_shape(h: f64) -> f64 {
    let h = h.rem_euclid(24.0);
    if (6.0..=19.0).contains(&h) {
        (std::f64::consts::PI * (h - 6.0) / 13.0).sin().max(0.0).powf(1.2)
    } else {
        0.0
    }
}

/// Smooth multiplicative noise around 1 with the given amplitude.
fn smooth_noise(rng: &mut ChaCha8Rng, len: usize, amplitude: f64) -> Vec<f64> {
    let mut x: f64 = 0.0;
    (0..len)
        .map(|_| {
            x = 0.95 * x + 0.05 * rng.random_range(-1.0..=1.0);
            1.0 + amplitude * (x * 4.0).clamp(-1.0, 1.0)
        })
        .collect()
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

/// Builds a radial feeder, one-minute net-injection profiles and a five-minute
/// wholesale LMP series. Deterministic in `seed`.
const MINUTES_PER_DAY: usize = 1440;

pub fn gen_synthetic_feeder(params: &SyntheticParams, horizon_minutes: usize, seed: u64) -> Result<SyntheticFeeder, DataError> {
    if params.n_smo == 0 || horizon_minutes == 0 {
        return Err(DataError::InvalidConfig("empty synthetic scenario".into()));
    }
    let start = parse_timestamp(&params.start)?;

    // node ids: all PV nodes that fit, then random fill
    let mut rng = stream(seed, 1);
    let pool_max = params.max_node_id.max(params.n_smo + params.pv_nodes.len() + 1);
    let mut ids: Vec<usize> = params
        .pv_nodes
        .iter()
        .copied()
        .filter(|&i| i != params.slack_id)
        .take(params.n_smo)
        .collect();
    let mut rest: Vec<usize> = (1..=pool_max)
        .filter(|i| *i != params.slack_id && !ids.contains(i))
        .collect();
    rest.shuffle(&mut rng);
    ids.extend(rest.into_iter().take(params.n_smo - ids.len()));
    ids.sort_unstable();
    let pv_ids: Vec<usize> = ids.iter().copied().filter(|i| params.pv_nodes.contains(i)).collect();

    // tree: each node hangs off one of the few most recently placed nodes
    let mut order = ids.clone();
    order.shuffle(&mut rng);
    let mut placed = vec![params.slack_id];
    let mut parent = BTreeMap::new();
    let mut length_km = BTreeMap::new();
    for &i in &order {
        let lo = placed.len().saturating_sub(4);
        let p = placed[rng.random_range(lo..placed.len())];
        parent.insert(i, p);
        length_km.insert(i, rng.random_range(0.1..0.5));
        placed.push(i);
    }

    // load and PV profiles, generated for whole days so that the peak scaling
    // and the random draws do not depend on the horizon
    let span = horizon_minutes.div_ceil(MINUTES_PER_DAY) * MINUTES_PER_DAY;
    let mut prng = stream(seed, 2);
    let weights: BTreeMap<usize, f64> = ids.iter().map(|&i| (i, prng.random_range(0.5..1.5))).collect();
    let mut loads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &i in &ids {
        let noise = smooth_noise(&mut prng, span, 0.08);
        let shift = prng.random_range(-0.5..0.5);
        let series = (0..span)
            .map(|m| weights[&i] * load_shape(m as f64 / 60.0 + shift) * noise[m])
            .collect();
        loads.insert(i, series);
    }
    let (peak_step, raw_peak) = (0..span)
        .map(|m| (m, loads.values().map(|s| s[m]).sum::<f64>()))
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let scale = params.peak_load_kw / raw_peak;
    for s in loads.values_mut() {
        for v in s.iter_mut() {
            *v *= scale;
        }
    }
    let pv_weights: Vec<f64> = pv_ids.iter().map(|_| prng.random_range(0.5..1.5)).collect();
    let pv_sum: f64 = pv_weights.iter().sum();
    let pv_nameplate_kw: BTreeMap<usize, f64> = pv_ids
        .iter()
        .zip(&pv_weights)
        .map(|(&i, w)| (i, params.pv_total_kw * w / pv_sum))
        .collect();
    let tan_phi = (1.0 - params.power_factor.powi(2)).sqrt() / params.power_factor;
    let mut nodes = BTreeMap::new();
    for &i in &ids {
        let pv_cap = pv_nameplate_kw.get(&i).copied().unwrap_or(0.0);
        let clouds = smooth_noise(&mut prng, span, 0.1);
        let rows: Vec<(f64, f64)> = (0..span)
            .map(|m| {
                let l = loads[&i][m];
                let g = pv_cap * (pv_shape(m as f64 / 60.0) * clouds[m]).min(1.0);
                (g - l, -l * tan_phi)
            })
            .collect();
        nodes.insert(i, rows);
    }
    let mut profiles = ProfileSeries {
        start,
        cadence_minutes: 1,
        nodes,
    };

    // impedances: scale so the linearized drop at peak hits the target
    let s_base_kw = params.s_base_mva * 1000.0;
    let z_base = params.v_base_kv * params.v_base_kv / params.s_base_mva;
    let (r_km, x_km) = (0.3, 0.35);
    let mut down: BTreeMap<usize, (f64, f64)> = ids
        .iter()
        .map(|&i| {
            let (p, q) = profiles.nodes[&i][peak_step];
            (i, (-p / s_base_kw, -q / s_base_kw))
        })
        .collect();
    for &i in order.iter().rev() {
        let d = down[&i];
        if let Some(e) = down.get_mut(&parent[&i]) {
            e.0 += d.0;
            e.1 += d.1;
        }
    }
    let mut drop: BTreeMap<usize, f64> = BTreeMap::from([(params.slack_id, 0.0)]);
    for &i in &order {
        let (p, q) = down[&i];
        let len = length_km[&i];
        let d = drop[&parent[&i]] + 2.0 * (r_km * len * p + x_km * len * q) / z_base;
        drop.insert(i, d);
    }
    let max_drop = drop.values().cloned().fold(0.0, f64::max);
    let z_scale = if max_drop > 0.0 { params.peak_v_sq_drop / max_drop } else { 1.0 };

    let mut node_specs = vec![NodeSpec::new(params.slack_id, NodeKind::Slack, params.v_base_kv)];
    node_specs.extend(ids.iter().map(|&i| NodeSpec::new(i, NodeKind::Smo, params.v_base_kv)));
    let lines = order
        .iter()
        .map(|&i| LineSpec {
            from: parent[&i],
            to: i,
            r_ohm: r_km * length_km[&i] * z_scale,
            x_ohm: x_km * length_km[&i] * z_scale,
            s_max_kva: None,
        })
        .collect();
    let feeder = FeederSpec {
        s_base_mva: params.s_base_mva,
        nodes: node_specs,
        lines,
    };

    for rows in profiles.nodes.values_mut() {
        rows.truncate(horizon_minutes);
    }
    let lmp = gen_synthetic_lmp(params, horizon_minutes, seed)?;
    Ok(SyntheticFeeder {
        feeder,
        profiles,
        lmp,
        pv_nameplate_kw,
        peak_load_kw: params.peak_load_kw,
    })
}

/// Five-minute LMPs following the load shape within `[lmp_min, lmp_max]`.
pub fn gen_synthetic_lmp(params: &SyntheticParams, horizon_minutes: usize, seed: u64) -> Result<LmpSeries, DataError> {
    let start = parse_timestamp(&params.start)?;
    let mut rng = stream(seed, 3);
    let n = horizon_minutes.div_ceil(5);
    let (lo, hi) = (params.lmp_min, params.lmp_max);
    let (smin, smax) = (0.4, 1.0 + 0.55);
    let values = (0..n)
        .map(|k| {
            let h = k as f64 * 5.0 / 60.0;
            let s = ((load_shape(h) - smin) / (smax - smin)).clamp(0.0, 1.0);
            let v = lo + (hi - lo) * s + 0.004 * rng.random_range(-1.0..=1.0);
            (v.clamp(lo, hi) * 1e5).round() / 1e5
        })
        .collect();
    Ok(LmpSeries {
        start,
        cadence_minutes: 5,
        values,
    })
}
