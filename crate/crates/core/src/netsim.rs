//! Downlink physical-layer model for a small cluster of adjacent small cells.
//!
//! Every base station reuses the full set of resource blocks (RBs). Within a
//! cell each RB carries exactly one user, so the only interference a user sees
//! on RB `k` comes from neighboring stations transmitting on their own RB `k`.
//! Channel gains follow a deterministic log-distance urban micro-cell path
//! loss with no fading, which keeps every evaluation a pure function of its
//! inputs.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest user-to-station distance produced by the sampler, in meters.
pub const MIN_USER_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetsimError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("base station {bs} has no users")]
    NoUsers { bs: usize },
    #[error("invalid power decision: {0}")]
    InvalidDecision(String),
    #[error("invalid network config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
}

/// Which scalar the controllers observe for each base station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    /// Number of users served by the station.
    Discrete,
    /// Mean distance between the station and its users, in meters.
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub num_bs: usize,
    pub rbs_per_bs: usize,
    pub rb_bandwidth_hz: f64,
    pub noise_density_w_per_hz: f64,
    pub carrier_freq_hz: f64,
    pub max_power_w: f64,
    pub min_rate_bps: f64,
    pub coverage_radius_m: f64,
    /// Distance between neighboring stations; stations sit on a regular polygon.
    pub inter_site_distance_m: f64,
    pub power_levels_w: Vec<f64>,
    pub min_users: usize,
    pub max_users: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_bs: 3,
            rbs_per_bs: 25,
            rb_bandwidth_hz: 180e3,
            noise_density_w_per_hz: 10f64.powf(-174.0 / 10.0) / 1000.0,
            carrier_freq_hz: 3.5e9,
            max_power_w: 1.0,
            min_rate_bps: 1.0e6,
            coverage_radius_m: 20.0,
            inter_site_distance_m: 80.0,
            power_levels_w: vec![0.25, 0.5, 0.75, 1.0],
            min_users: 5,
            max_users: 15,
            seed: 42,
        }
    }
}

impl NetworkConfig {
    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<(), NetsimError> {
        let mut problems = Vec::new();
        if self.num_bs < 2 {
            problems.push(format!("num_bs must be at least 2, got {}", self.num_bs));
        }
        if self.rbs_per_bs < 1 {
            problems.push("rbs_per_bs must be at least 1".to_string());
        }
        if !(self.rb_bandwidth_hz > 0.0) {
            problems.push(format!("rb_bandwidth_hz must be positive, got {}", self.rb_bandwidth_hz));
        }
        if !(self.noise_density_w_per_hz >= 0.0) {
            problems.push("noise_density_w_per_hz must be non-negative".to_string());
        }
        if !(self.carrier_freq_hz > 0.0) {
            problems.push("carrier_freq_hz must be positive".to_string());
        }
        if !(self.coverage_radius_m > MIN_USER_DISTANCE_M) {
            problems.push(format!(
                "coverage_radius_m must exceed {MIN_USER_DISTANCE_M} m, got {}",
                self.coverage_radius_m
            ));
        }
        if !(self.inter_site_distance_m > 0.0) {
            problems.push("inter_site_distance_m must be positive".to_string());
        }
        if !(self.min_rate_bps >= 0.0) {
            problems.push("min_rate_bps must be non-negative".to_string());
        }
        if self.power_levels_w.is_empty() {
            problems.push("power_levels_w must not be empty".to_string());
        } else {
            if self.power_levels_w.len() > u8::MAX as usize {
                problems.push("too many power levels".to_string());
            }
            if self.power_levels_w[0] < 0.0 {
                problems.push("power levels must be non-negative".to_string());
            }
            if self.power_levels_w.windows(2).any(|w| !(w[1] > w[0])) {
                problems.push("power_levels_w must be strictly increasing".to_string());
            }
            let top = *self.power_levels_w.last().unwrap();
            if top > self.max_power_w {
                problems.push(format!(
                    "highest power level {top} W exceeds max_power_w {} W",
                    self.max_power_w
                ));
            }
        }
        if self.min_users < 1 || self.min_users > self.max_users {
            problems.push(format!(
                "user range must satisfy 1 <= min_users <= max_users, got {}..={}",
                self.min_users, self.max_users
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(NetsimError::InvalidConfig(problems))
        }
    }

    pub fn num_levels(&self) -> u8 {
        self.power_levels_w.len() as u8
    }

    /// Station coordinates: vertices of a regular polygon whose side is the
    /// inter-site distance, centered on the origin.
    pub fn bs_positions(&self) -> Vec<Point> {
        let n = self.num_bs;
        let circumradius = if n == 2 {
            self.inter_site_distance_m / 2.0
        } else {
            self.inter_site_distance_m / (2.0 * (PI / n as f64).sin())
        };
        (0..n)
            .map(|b| {
                let angle = PI / 2.0 + 2.0 * PI * b as f64 / n as f64;
                Point { x: circumradius * angle.cos(), y: circumradius * angle.sin() }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Path loss in dB: `32.4 + 21 log10(d_m) + 20 log10(f_GHz)`.
pub fn path_loss_db(distance_m: f64, carrier_freq_hz: f64) -> Result<f64, NetsimError> {
    if !(distance_m > 0.0) {
        return Err(NetsimError::NonPositiveDistance(distance_m));
    }
    Ok(32.4 + 21.0 * distance_m.log10() + 20.0 * (carrier_freq_hz / 1e9).log10())
}

/// Linear channel gain for a link of the given length.
pub fn channel_gain(distance_m: f64, config: &NetworkConfig) -> Result<f64, NetsimError> {
    let pl = path_loss_db(distance_m, config.carrier_freq_hz)?;
    Ok(10f64.powf(-pl / 10.0))
}

/// Snapshot of user placement. `users[b]` holds the absolute positions of
/// the users served by station `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub case: Case,
    pub bs_positions: Vec<Point>,
    pub users: Vec<Vec<Point>>,
    avg_distance: Vec<f64>,
}

impl NetworkState {
    pub fn new(case: Case, bs_positions: Vec<Point>, users: Vec<Vec<Point>>) -> Result<Self, NetsimError> {
        if bs_positions.len() != users.len() {
            return Err(NetsimError::InvalidConfig(vec![format!(
                "{} stations but {} user groups",
                bs_positions.len(),
                users.len()
            )]));
        }
        let mut avg_distance = Vec::with_capacity(users.len());
        for (bs, (site, group)) in bs_positions.iter().zip(&users).enumerate() {
            if group.is_empty() {
                return Err(NetsimError::NoUsers { bs });
            }
            let total: f64 = group.iter().map(|u| u.distance(site)).sum();
            avg_distance.push(total / group.len() as f64);
        }
        Ok(Self { case, bs_positions, users, avg_distance })
    }

    /// Draws per-station user counts uniformly from the configured range and
    /// places the users uniformly over each coverage disk.
    pub fn sample<R: Rng + ?Sized>(config: &NetworkConfig, case: Case, rng: &mut R) -> Self {
        let counts: Vec<usize> = (0..config.num_bs)
            .map(|_| rng.gen_range(config.min_users..=config.max_users))
            .collect();
        Self::sample_with_counts(config, case, &counts, rng)
    }

    pub fn sample_with_counts<R: Rng + ?Sized>(
        config: &NetworkConfig,
        case: Case,
        counts: &[usize],
        rng: &mut R,
    ) -> Self {
        let sites = config.bs_positions();
        let users = sites
            .iter()
            .zip(counts)
            .map(|(site, &n)| (0..n).map(|_| sample_in_disk(site, config.coverage_radius_m, rng)).collect())
            .collect();
        Self::new(case, sites, users).expect("sampled state has users at every station")
    }

    /// Same user counts, fresh positions.
    pub fn resample_positions<R: Rng + ?Sized>(&self, config: &NetworkConfig, rng: &mut R) -> Self {
        let counts: Vec<usize> = self.users.iter().map(Vec::len).collect();
        Self::sample_with_counts(config, self.case, &counts, rng)
    }

    pub fn num_bs(&self) -> usize {
        self.users.len()
    }

    pub fn user_count(&self, bs: usize) -> usize {
        self.users[bs].len()
    }

    pub fn user_counts(&self) -> Vec<usize> {
        self.users.iter().map(Vec::len).collect()
    }

    pub fn avg_distance(&self, bs: usize) -> f64 {
        self.avg_distance[bs]
    }

    /// The scalar state a controller at station `bs` observes.
    pub fn observation(&self, bs: usize) -> f64 {
        match self.case {
            Case::Discrete => self.user_count(bs) as f64,
            Case::Continuous => self.avg_distance(bs),
        }
    }
}

/// Area-uniform point in the annulus `[MIN_USER_DISTANCE_M, radius]` around `center`.
fn sample_in_disk<R: Rng + ?Sized>(center: &Point, radius: f64, rng: &mut R) -> Point {
    let r_min2 = MIN_USER_DISTANCE_M * MIN_USER_DISTANCE_M;
    let r = (r_min2 + rng.gen::<f64>() * (radius * radius - r_min2)).sqrt();
    let theta = rng.gen::<f64>() * 2.0 * PI;
    Point { x: center.x + r * theta.cos(), y: center.y + r * theta.sin() }
}

/// One 1-based power level index per station.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PowerDecision {
    levels: Vec<u8>,
}

impl PowerDecision {
    pub fn new(levels: Vec<u8>, config: &NetworkConfig) -> Result<Self, NetsimError> {
        if levels.len() != config.num_bs {
            return Err(NetsimError::InvalidDecision(format!(
                "expected {} levels, got {}",
                config.num_bs,
                levels.len()
            )));
        }
        if let Some(bad) = levels.iter().find(|&&l| l < 1 || l > config.num_levels()) {
            return Err(NetsimError::InvalidDecision(format!(
                "level {bad} outside 1..={}",
                config.num_levels()
            )));
        }
        Ok(Self { levels })
    }

    pub fn uniform(level: u8, config: &NetworkConfig) -> Result<Self, NetsimError> {
        Self::new(vec![level; config.num_bs], config)
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn level(&self, bs: usize) -> u8 {
        self.levels[bs]
    }

    /// Total transmit power `P_b` of a station.
    pub fn bs_power(&self, bs: usize, config: &NetworkConfig) -> f64 {
        config.power_levels_w[self.levels[bs] as usize - 1]
    }

    /// Per-RB power `p_{b,k}`; the station's power is split equally over its RBs.
    pub fn rb_power(&self, bs: usize, config: &NetworkConfig) -> f64 {
        self.bs_power(bs, config) / config.rbs_per_bs as f64
    }

    pub fn total_power(&self, config: &NetworkConfig) -> f64 {
        (0..self.levels.len()).map(|b| self.bs_power(b, config)).sum()
    }
}

/// RB ownership per cell: `owners[b][k]` is the user served on RB `k` of
/// station `b`, or `None` when the RB is idle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RbAllocation {
    owners: Vec<Vec<Option<usize>>>,
}

impl RbAllocation {
    /// The allocation indicator `γ_{b,k,u}`.
    pub fn gamma(&self, bs: usize, rb: usize, user: usize) -> bool {
        self.owners[bs][rb] == Some(user)
    }

    pub fn owner(&self, bs: usize, rb: usize) -> Option<usize> {
        self.owners[bs][rb]
    }

    pub fn is_active(&self, bs: usize, rb: usize) -> bool {
        self.owners[bs][rb].is_some()
    }

    pub fn rbs_of(&self, bs: usize, user: usize) -> impl Iterator<Item = usize> + '_ {
        self.owners[bs]
            .iter()
            .enumerate()
            .filter_map(move |(k, o)| (*o == Some(user)).then_some(k))
    }

    /// Number of RBs held by each user of a station.
    pub fn counts(&self, bs: usize, num_users: usize) -> Vec<usize> {
        let mut counts = vec![0; num_users];
        for owner in self.owners[bs].iter().flatten() {
            counts[*owner] += 1;
        }
        counts
    }
}

/// Proportional-fair RB allocation with no rate history, which reduces to
/// round-robin over users in index order.
pub fn allocate_rbs(state: &NetworkState, config: &NetworkConfig) -> Result<RbAllocation, NetsimError> {
    let mut owners = Vec::with_capacity(state.num_bs());
    for (bs, group) in state.users.iter().enumerate() {
        if group.is_empty() {
            return Err(NetsimError::NoUsers { bs });
        }
        owners.push((0..config.rbs_per_bs).map(|k| Some(k % group.len())).collect());
    }
    Ok(RbAllocation { owners })
}

/// Achievable rate of one user in bit/s:
/// `Σ_{k: γ=1} d_k · log2(1 + p_{b,k} h_{b,u} / (Σ_{b'≠b} p_{b',k} h_{b',u} + d_k N_0))`.
pub fn data_rate(
    bs: usize,
    user: usize,
    decision: &PowerDecision,
    alloc: &RbAllocation,
    state: &NetworkState,
    config: &NetworkConfig,
) -> Result<f64, NetsimError> {
    let position = state.users[bs][user];
    let gains = state
        .bs_positions
        .iter()
        .map(|site| channel_gain(position.distance(site), config))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(user_rate(bs, user, &gains, decision, alloc, config))
}

fn user_rate(
    bs: usize,
    user: usize,
    gains: &[f64],
    decision: &PowerDecision,
    alloc: &RbAllocation,
    config: &NetworkConfig,
) -> f64 {
    let noise = config.rb_bandwidth_hz * config.noise_density_w_per_hz;
    let own_rb_power = decision.rb_power(bs, config);
    let mut rate = 0.0;
    for k in alloc.rbs_of(bs, user) {
        let interference: f64 = (0..gains.len())
            .filter(|&other| other != bs && alloc.is_active(other, k))
            .map(|other| decision.rb_power(other, config) * gains[other])
            .sum();
        let signal = own_rb_power * gains[bs];
        rate += config.rb_bandwidth_hz * (signal / (interference + noise)).ln_1p() / std::f64::consts::LN_2;
    }
    rate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `user_rates[b][u]` in bit/s.
    pub user_rates: Vec<Vec<f64>>,
    pub mean_rates: Vec<f64>,
    pub bs_power: Vec<f64>,
    pub total_power: f64,
    /// Whether each station meets the average-rate requirement.
    pub constraint_ok: Vec<bool>,
}

impl EvalReport {
    pub fn all_ok(&self) -> bool {
        self.constraint_ok.iter().all(|&ok| ok)
    }
}

/// A state with its allocation and link gains precomputed, for evaluating
/// many decisions against the same placement.
#[derive(Debug, Clone)]
pub struct Scene<'a> {
    config: &'a NetworkConfig,
    alloc: RbAllocation,
    /// `gains[b][u][t]`: gain from station `t` to user `u` of station `b`.
    gains: Vec<Vec<Vec<f64>>>,
}

impl<'a> Scene<'a> {
    pub fn new(state: &NetworkState, config: &'a NetworkConfig) -> Result<Self, NetsimError> {
        if state.num_bs() != config.num_bs {
            return Err(NetsimError::InvalidConfig(vec![format!(
                "state has {} stations, config expects {}",
                state.num_bs(),
                config.num_bs
            )]));
        }
        let alloc = allocate_rbs(state, config)?;
        let gains = state
            .users
            .iter()
            .map(|group| {
                group
                    .iter()
                    .map(|u| {
                        state
                            .bs_positions
                            .iter()
                            .map(|site| channel_gain(u.distance(site), config))
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { config, alloc, gains })
    }

    pub fn allocation(&self) -> &RbAllocation {
        &self.alloc
    }

    pub fn evaluate(&self, decision: &PowerDecision) -> EvalReport {
        let config = self.config;
        let user_rates: Vec<Vec<f64>> = self
            .gains
            .iter()
            .enumerate()
            .map(|(bs, group)| {
                group
                    .iter()
                    .enumerate()
                    .map(|(u, g)| user_rate(bs, u, g, decision, &self.alloc, config))
                    .collect()
            })
            .collect();
        let mean_rates: Vec<f64> = user_rates
            .iter()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect();
        let bs_power: Vec<f64> = (0..config.num_bs).map(|b| decision.bs_power(b, config)).collect();
        let total_power = bs_power.iter().sum();
        let constraint_ok = mean_rates.iter().map(|&m| m >= config.min_rate_bps).collect();
        EvalReport { user_rates, mean_rates, bs_power, total_power, constraint_ok }
    }
}

/// Rates, power, and constraint outcome of a joint decision.
pub fn evaluate(
    state: &NetworkState,
    decision: &PowerDecision,
    config: &NetworkConfig,
) -> Result<EvalReport, NetsimError> {
    if decision.levels().len() != config.num_bs {
        return Err(NetsimError::InvalidDecision(format!(
            "expected {} levels, got {}",
            config.num_bs,
            decision.levels().len()
        )));
    }
    Ok(Scene::new(state, config)?.evaluate(decision))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> NetworkConfig {
        NetworkConfig::default()
    }

    #[test]
    fn path_loss_at_one_meter() {
        let pl = path_loss_db(1.0, 3.5e9).unwrap();
        assert!((pl - (32.4 + 20.0 * 3.5f64.log10())).abs() < 1e-12);
        assert!((pl - 43.281).abs() < 1e-3);
        let g = channel_gain(1.0, &cfg()).unwrap();
        assert!((g - 4.70e-5).abs() / 4.70e-5 < 5e-3);
    }

    #[test]
    fn path_loss_at_ten_meters() {
        let pl = path_loss_db(10.0, 3.5e9).unwrap();
        assert!((pl - 64.281).abs() < 1e-3);
    }

    #[test]
    fn channel_gain_at_17_3_m_matches_high_precision_value() {
        // mpmath, 50 digits: 10**(-(32.4 + 21*log10(17.3) + 20*log10(3.5))/10)
        let expected = 1.180_231_209_465_784_7e-7;
        let g = channel_gain(17.3, &cfg()).unwrap();
        assert!(((g - expected) / expected).abs() < 1e-9, "{g}");
    }

    #[test]
    fn non_positive_distance_is_rejected() {
        assert_eq!(channel_gain(0.0, &cfg()), Err(NetsimError::NonPositiveDistance(0.0)));
        assert!(channel_gain(-3.0, &cfg()).is_err());
        assert!(channel_gain(f64::NAN, &cfg()).is_err());
    }

    #[test]
    fn gain_strictly_decreasing() {
        let c = cfg();
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let g = channel_gain(i as f64 * 0.25, &c).unwrap();
            assert!(g < prev);
            prev = g;
        }
    }

    fn state_with_counts(counts: &[usize]) -> NetworkState {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        NetworkState::sample_with_counts(&cfg(), Case::Discrete, counts, &mut rng)
    }

    #[test]
    fn rb_allocation_divisible_case() {
        let s = state_with_counts(&[5, 5, 5]);
        let a = allocate_rbs(&s, &cfg()).unwrap();
        assert_eq!(a.counts(0, 5), vec![5; 5]);
    }

    #[test]
    fn rb_allocation_remainder_case() {
        let s = state_with_counts(&[7, 5, 5]);
        let a = allocate_rbs(&s, &cfg()).unwrap();
        assert_eq!(a.counts(0, 7), vec![4, 4, 4, 4, 3, 3, 3]);
    }

    #[test]
    fn rb_allocation_single_user() {
        let s = state_with_counts(&[1, 5, 5]);
        let a = allocate_rbs(&s, &cfg()).unwrap();
        assert_eq!(a.counts(0, 1), vec![25]);
        assert!((0..25).all(|k| a.gamma(0, k, 0)));
    }

    #[test]
    fn rb_allocation_one_user_per_rb() {
        let s = state_with_counts(&[13, 9, 15]);
        let a = allocate_rbs(&s, &cfg()).unwrap();
        for b in 0..3 {
            let n = s.user_count(b);
            for k in 0..25 {
                let holders = (0..n).filter(|&u| a.gamma(b, k, u)).count();
                assert_eq!(holders, 1);
            }
            let min = a.counts(b, n).into_iter().min().unwrap();
            assert!(min >= 25 / n);
        }
    }

    #[test]
    fn empty_cell_is_an_allocation_error() {
        let c = cfg();
        let sites = c.bs_positions();
        let err = NetworkState::new(Case::Discrete, sites, vec![vec![], vec![Point { x: 0.0, y: 0.0 }], vec![]]);
        assert_eq!(err.unwrap_err(), NetsimError::NoUsers { bs: 0 });
    }

    #[test]
    fn zero_power_gives_zero_rate() {
        let mut c = cfg();
        c.power_levels_w = vec![0.0, 0.5, 0.75, 1.0];
        let s = state_with_counts(&[6, 7, 8]);
        let d = PowerDecision::uniform(1, &c).unwrap();
        let report = evaluate(&s, &d, &c).unwrap();
        assert!(report.user_rates.iter().flatten().all(|&r| r == 0.0));
    }

    #[test]
    fn unit_snr_single_rb_gives_bandwidth() {
        let mut c = cfg();
        c.rbs_per_bs = 1;
        let sites = c.bs_positions();
        let user = Point { x: sites[0].x + 10.0, y: sites[0].y };
        // Neighbors transmit zero power, so the link is noise-limited.
        c.power_levels_w = vec![0.0, 1.0];
        let h = channel_gain(10.0, &c).unwrap();
        c.noise_density_w_per_hz = 1.0 * h / c.rb_bandwidth_hz;
        let far = |s: &Point| vec![Point { x: s.x + 3.0, y: s.y }];
        let s = NetworkState::new(Case::Discrete, sites.clone(), vec![vec![user], far(&sites[1]), far(&sites[2])]).unwrap();
        let d = PowerDecision::new(vec![2, 1, 1], &c).unwrap();
        let alloc = allocate_rbs(&s, &c).unwrap();
        let rate = data_rate(0, 0, &d, &alloc, &s, &c).unwrap();
        assert!((rate - c.rb_bandwidth_hz).abs() / c.rb_bandwidth_hz < 1e-12);
    }

    #[test]
    fn max_power_everywhere_sums_maxima() {
        let c = cfg();
        let s = state_with_counts(&[6, 7, 8]);
        let d = PowerDecision::uniform(4, &c).unwrap();
        let report = evaluate(&s, &d, &c).unwrap();
        assert!((report.total_power - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_min_rate_is_always_satisfied() {
        let mut c = cfg();
        c.min_rate_bps = 0.0;
        let s = state_with_counts(&[15, 15, 15]);
        let d = PowerDecision::new(vec![1, 4, 4], &c).unwrap();
        assert!(evaluate(&s, &d, &c).unwrap().all_ok());
    }

    #[test]
    fn power_split_sums_to_station_power() {
        let c = cfg();
        for level in 1..=4 {
            let d = PowerDecision::uniform(level, &c).unwrap();
            let sum: f64 = (0..c.rbs_per_bs).map(|_| d.rb_power(0, &c)).sum();
            assert!((sum - d.bs_power(0, &c)).abs() < 1e-12);
            assert!(d.bs_power(0, &c) <= c.max_power_w);
        }
    }

    #[test]
    fn decision_validation() {
        let c = cfg();
        assert!(PowerDecision::new(vec![0, 1, 1], &c).is_err());
        assert!(PowerDecision::new(vec![5, 1, 1], &c).is_err());
        assert!(PowerDecision::new(vec![1, 1], &c).is_err());
    }

    #[test]
    fn config_validation_collects_all_problems() {
        let c = NetworkConfig {
            num_bs: 1,
            rbs_per_bs: 0,
            power_levels_w: vec![0.5, 0.25, 2.0],
            ..NetworkConfig::default()
        };
        match c.validate() {
            Err(NetsimError::InvalidConfig(p)) => assert_eq!(p.len(), 4, "{p:?}"),
            other => panic!("{other:?}"),
        }
        assert!(NetworkConfig::default().validate().is_ok());
    }

    #[test]
    fn sampled_users_stay_in_coverage() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let s = NetworkState::sample(&c, Case::Continuous, &mut rng);
            for b in 0..3 {
                assert!((5..=15).contains(&s.user_count(b)));
                let site = s.bs_positions[b];
                let mut total = 0.0;
                for u in &s.users[b] {
                    let d = u.distance(&site);
                    assert!(d >= MIN_USER_DISTANCE_M - 1e-12 && d <= c.coverage_radius_m + 1e-12);
                    total += d;
                }
                assert!((total / s.user_count(b) as f64 - s.avg_distance(b)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn stations_are_adjacent_at_inter_site_distance() {
        let c = cfg();
        let p = c.bs_positions();
        for i in 0..3 {
            for j in (i + 1)..3 {
                assert!((p[i].distance(&p[j]) - 80.0).abs() < 1e-9);
            }
        }
    }
}
