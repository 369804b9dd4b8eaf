//! Observation types, the measurement grid and the step cumulative hazard.
//!
//! The covariate path is piecewise constant: on `(t_j, t_{j+1}]` it equals the value measured
//! (or due to be measured) at `t_{j+1}`. A subject leaving the study at `x` therefore has an
//! unmeasured *latent* value on the terminal window `(t_{a_x}, x]`.

use alloc::format;
use alloc::vec::Vec;

use crate::covariate::TransitionParams;
use crate::error::{Error, Result};

/// Shift applied per rank when breaking tied event times.
pub const TIE_JITTER: f64 = 1e-9;

/// Common measurement instants `0 = t_0 < t_1 < ...`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "Vec<f64>", into = "Vec<f64>"))]
pub struct MeasurementGrid {
    times: Vec<f64>,
}

impl MeasurementGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        match times.first() {
            None => return Err(Error::InvalidGrid("grid is empty".into())),
            Some(&t0) if t0 != 0.0 => {
                return Err(Error::InvalidGrid(format!(
                    "first grid time must be 0, got {t0}"
                )))
            }
            _ => {}
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("grid times must be finite".into()));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "grid times must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { times })
    }

    /// Equally spaced grid `k * step` for all `k * step < horizon`.
    pub fn regular(step: f64, horizon: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "grid step must be positive, got {step}"
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let mut times = Vec::new();
        let mut k = 0u32;
        loop {
            let t = f64::from(k) * step;
            if t >= horizon * (1.0 - 1e-12) {
                break;
            }
            times.push(t);
            k += 1;
        }
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the last grid time strictly before `t`, `a_t = max{k : t_k < t}`.
    pub fn last_index(&self, t: f64) -> Result<usize> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("last_index needs t > 0, got {t}")));
        }
        Ok(self.last_index_unchecked(t))
    }

    pub(crate) fn last_index_unchecked(&self, t: f64) -> usize {
        // t_0 = 0 < t, so the partition point is at least 1
        self.times.partition_point(|&tk| tk < t) - 1
    }
}

impl TryFrom<Vec<f64>> for MeasurementGrid {
    type Error = Error;

    fn try_from(times: Vec<f64>) -> Result<Self> {
        Self::new(times)
    }
}

impl From<MeasurementGrid> for Vec<f64> {
    fn from(grid: MeasurementGrid) -> Self {
        grid.times
    }
}

/// Covariate value along a subject's path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovariateValue {
    Observed(f64),
    Latent,
}

/// One subject's right-censored follow-up and grid measurements.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Subject {
    pub id: u64,
    pub x: f64,
    #[cfg_attr(feature = "serde", serde(with = "indicator"))]
    pub delta: bool,
    /// `z_0, ..., z_{a_x}`
    pub measurements: Vec<f64>,
    /// The terminal-window value, when it is known (full-information datasets only).
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub terminal: Option<f64>,
}

impl Subject {
    pub fn new(id: u64, x: f64, delta: bool, measurements: Vec<f64>) -> Self {
        Self {
            id,
            x,
            delta,
            measurements,
            terminal: None,
        }
    }

    /// Last measured value `z_{a_x}`.
    pub fn last_measurement(&self) -> f64 {
        *self
            .measurements
            .last()
            .expect("validated subjects carry z_0")
    }

    /// Path value at `u` under the next-value step convention.
    pub fn covariate_at(&self, u: f64, grid: &MeasurementGrid) -> Result<CovariateValue> {
        if !(u >= 0.0) || u > self.x {
            return Err(Error::Domain(format!(
                "covariate_at needs 0 <= u <= x = {}, got {u}",
                self.x
            )));
        }
        Ok(self.covariate_at_unchecked(u, grid))
    }

    pub(crate) fn covariate_at_unchecked(&self, u: f64, grid: &MeasurementGrid) -> CovariateValue {
        if u <= 0.0 {
            return CovariateValue::Observed(self.measurements[0]);
        }
        let j = grid.last_index_unchecked(u);
        match self.measurements.get(j + 1) {
            Some(&v) => CovariateValue::Observed(v),
            None => CovariateValue::Latent,
        }
    }

    /// Measurements followed by the latent value `z`: the complete-data covariate history.
    pub fn complete_history(&self, z: f64) -> Vec<f64> {
        let mut values = Vec::with_capacity(self.measurements.len() + 1);
        values.extend_from_slice(&self.measurements);
        values.push(z);
        values
    }

    fn validate(&self, grid: &MeasurementGrid, tau: f64) -> Result<()> {
        let fail = |reason: alloc::string::String| Error::InvalidSubject {
            id: self.id,
            reason,
        };
        if !(self.x > 0.0 && self.x.is_finite()) {
            return Err(fail(format!(
                "follow-up time must be positive, got {}",
                self.x
            )));
        }
        if self.x > tau {
            return Err(fail(format!(
                "follow-up time {} exceeds horizon {tau}",
                self.x
            )));
        }
        if self.x == tau && self.delta {
            return Err(fail(
                "subjects reaching the horizon must be censored".into(),
            ));
        }
        let expected = grid.last_index_unchecked(self.x) + 1;
        if self.measurements.len() != expected {
            return Err(fail(format!(
                "expected {expected} measurements before x = {}, got {}",
                self.x,
                self.measurements.len()
            )));
        }
        if self.measurements.iter().any(|v| !v.is_finite()) {
            return Err(fail("measurements must be finite".into()));
        }
        if matches!(self.terminal, Some(v) if !v.is_finite()) {
            return Err(fail("terminal value must be finite".into()));
        }
        Ok(())
    }
}

#[cfg(feature = "serde")]
mod indicator {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(alloc::format!(
                "event indicator must be 0 or 1, got {other}"
            ))),
        }
    }
}

/// A validated sample: subjects sorted by id on a shared grid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(try_from = "DatasetRepr", into = "DatasetRepr")
)]
pub struct Dataset {
    grid: MeasurementGrid,
    tau: f64,
    subjects: Vec<Subject>,
    /// `(time, subject index)` of uncensored subjects in increasing time.
    events: Vec<(f64, usize)>,
}

#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
struct DatasetRepr {
    grid: MeasurementGrid,
    tau: f64,
    subjects: Vec<Subject>,
}

impl TryFrom<DatasetRepr> for Dataset {
    type Error = Error;

    fn try_from(repr: DatasetRepr) -> Result<Self> {
        Dataset::new(repr.grid, repr.subjects, repr.tau)
    }
}

impl From<Dataset> for DatasetRepr {
    fn from(d: Dataset) -> Self {
        DatasetRepr {
            grid: d.grid,
            tau: d.tau,
            subjects: d.subjects,
        }
    }
}

impl Dataset {
    /// Validates and builds a dataset. Tied event times are rejected.
    pub fn new(grid: MeasurementGrid, subjects: Vec<Subject>, tau: f64) -> Result<Self> {
        Self::build(grid, subjects, tau, false)
    }

    /// Like [`Dataset::new`] but breaks ties by shifting the `r`-th tied subject (in id
    /// order) by `r * TIE_JITTER`.
    pub fn with_tie_jitter(
        grid: MeasurementGrid,
        subjects: Vec<Subject>,
        tau: f64,
    ) -> Result<Self> {
        Self::build(grid, subjects, tau, true)
    }

    fn build(
        grid: MeasurementGrid,
        mut subjects: Vec<Subject>,
        tau: f64,
        jitter: bool,
    ) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "horizon must be positive, got {tau}"
            )));
        }
        if grid.times().last().is_some_and(|&t| t >= tau) {
            return Err(Error::InvalidGrid(
                "grid times must lie before the horizon".into(),
            ));
        }
        subjects.sort_by_key(|s| s.id);
        if let Some(w) = subjects.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::DuplicateId(w[0].id));
        }
        if jitter {
            jitter_ties(&mut subjects);
        }
        for s in &subjects {
            s.validate(&grid, tau)?;
        }
        let mut events: Vec<(f64, usize)> = subjects
            .iter()
            .enumerate()
            .filter(|(_, s)| s.delta)
            .map(|(i, s)| (s.x, i))
            .collect();
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some(w) = events.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::TiedEventTimes {
                time: w[0].0,
                first: subjects[w[0].1].id,
                second: subjects[w[1].1].id,
            });
        }
        Ok(Self {
            grid,
            tau,
            subjects,
            events,
        })
    }

    pub fn grid(&self) -> &MeasurementGrid {
        &self.grid
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    /// Ordered event times `x_1 < ... < x_p`.
    pub fn event_times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.0).collect()
    }

    /// Index (into [`Dataset::subjects`]) of the subject failing at each event time.
    pub fn event_subjects(&self) -> Vec<usize> {
        self.events.iter().map(|e| e.1).collect()
    }

    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    /// Fraction of subjects with `x_i >= t`.
    pub fn at_risk_fraction(&self, t: f64) -> f64 {
        let at_risk = self.subjects.iter().filter(|s| s.x >= t).count();
        at_risk as f64 / self.n() as f64
    }

    /// True when every subject carries its terminal value.
    pub fn is_full_information(&self) -> bool {
        self.subjects.iter().all(|s| s.terminal.is_some())
    }

    pub(crate) fn require_events(&self) -> Result<()> {
        if self.events.is_empty() {
            Err(Error::NoEvents)
        } else {
            Ok(())
        }
    }
}

fn jitter_ties(subjects: &mut [Subject]) {
    // subjects are in id order; group uncensored subjects by follow-up time
    let mut order: Vec<usize> = (0..subjects.len()).filter(|&i| subjects[i].delta).collect();
    order.sort_by(|&a, &b| subjects[a].x.total_cmp(&subjects[b].x).then(a.cmp(&b)));
    let mut start = 0;
    while start < order.len() {
        let x = subjects[order[start]].x;
        let mut end = start + 1;
        while end < order.len() && subjects[order[end]].x == x {
            end += 1;
        }
        for (rank, &i) in order[start..end].iter().enumerate() {
            subjects[i].x = x + TIE_JITTER * rank as f64;
        }
        start = end;
    }
}

/// Step cumulative hazard with jumps at ordered event times.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "HazardRepr", into = "HazardRepr"))]
pub struct SieveHazard {
    times: Vec<f64>,
    jumps: Vec<f64>,
    cumulative: Vec<f64>,
}

#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
struct HazardRepr {
    times: Vec<f64>,
    jumps: Vec<f64>,
}

impl TryFrom<HazardRepr> for SieveHazard {
    type Error = Error;

    fn try_from(repr: HazardRepr) -> Result<Self> {
        SieveHazard::new(repr.times, repr.jumps)
    }
}

impl From<SieveHazard> for HazardRepr {
    fn from(h: SieveHazard) -> Self {
        HazardRepr {
            times: h.times,
            jumps: h.jumps,
        }
    }
}

impl SieveHazard {
    pub fn new(times: Vec<f64>, jumps: Vec<f64>) -> Result<Self> {
        if times.len() != jumps.len() {
            return Err(Error::Domain(format!(
                "hazard has {} times but {} jumps",
                times.len(),
                jumps.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) || times.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Domain(
                "hazard times must be positive and strictly increasing".into(),
            ));
        }
        if jumps.iter().any(|j| !(j.is_finite() && *j >= 0.0)) {
            return Err(Error::Domain(
                "hazard jumps must be finite and nonnegative".into(),
            ));
        }
        let cumulative = jumps
            .iter()
            .scan(0.0, |acc, j| {
                *acc += j;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            times,
            jumps,
            cumulative,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `Λ(t) = Σ_{x_k <= t} ΔΛ_k`
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// Cumulative values `Λ(x_k)` at the jump times.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Jump located exactly at `t`, or zero.
    pub fn jump_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x < t);
        match self.times.get(k) {
            Some(&x) if x == t => self.jumps[k],
            _ => 0.0,
        }
    }

    /// Largest absolute difference of the two step functions over all jump points.
    pub fn sup_distance(&self, other: &SieveHazard) -> f64 {
        self.times
            .iter()
            .chain(other.times.iter())
            .map(|&t| (self.eval(t) - other.eval(t)).abs())
            .fold(0.0, f64::max)
    }
}

/// Full parameter `θ = (α, β, Λ)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Theta {
    pub alpha: TransitionParams,
    pub beta: f64,
    pub hazard: SieveHazard,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn grid012() -> MeasurementGrid {
        MeasurementGrid::new(vec![0.0, 1.0, 2.0]).unwrap()
    }

    #[test]
    fn last_index_examples() {
        let g = grid012();
        assert_eq!(g.last_index(1.5).unwrap(), 1);
        assert_eq!(g.last_index(1.0).unwrap(), 0);
        assert_eq!(g.last_index(2.5).unwrap(), 2);
        assert!(g.last_index(0.0).is_err());
        assert!(g.last_index(-1.0).is_err());
    }

    #[test]
    fn covariate_path_examples() {
        let g = grid012();
        let s = Subject::new(1, 1.7, true, vec![0.3, 0.9]);
        assert_eq!(
            s.covariate_at(0.5, &g).unwrap(),
            CovariateValue::Observed(0.9)
        );
        assert_eq!(
            s.covariate_at(1.0, &g).unwrap(),
            CovariateValue::Observed(0.9)
        );
        assert_eq!(s.covariate_at(1.4, &g).unwrap(), CovariateValue::Latent);
        assert_eq!(s.covariate_at(1.7, &g).unwrap(), CovariateValue::Latent);
        assert_eq!(
            s.covariate_at(0.0, &g).unwrap(),
            CovariateValue::Observed(0.3)
        );
        assert!(s.covariate_at(1.8, &g).is_err());
    }

    #[test]
    fn hazard_examples() {
        let h = SieveHazard::new(vec![1.0, 2.0], vec![0.5, 1.0]).unwrap();
        assert_eq!(h.eval(0.0), 0.0);
        assert_eq!(h.eval(0.5), 0.0);
        assert_eq!(h.eval(1.0), 0.5);
        assert_eq!(h.eval(3.0), 1.5);
        assert_eq!(h.jump_at(2.0), 1.0);
        assert_eq!(h.jump_at(1.5), 0.0);
        assert!(SieveHazard::new(vec![1.0], vec![-0.1]).is_err());
        assert!(SieveHazard::new(vec![2.0, 1.0], vec![0.1, 0.1]).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(MeasurementGrid::new(vec![0.5, 1.0]).is_err());
        assert!(MeasurementGrid::new(vec![0.0, 1.0, 1.0]).is_err());
        let g = MeasurementGrid::regular(0.25, 3.0).unwrap();
        assert_eq!(g.len(), 12);
        assert_eq!(g.times()[11], 2.75);
    }

    #[test]
    fn dataset_validation() {
        let g = grid012();
        let ok = vec![
            Subject::new(2, 1.7, true, vec![0.0, 1.0]),
            Subject::new(1, 3.0, false, vec![0.0, 1.0, 2.0]),
        ];
        let d = Dataset::new(g.clone(), ok, 3.0).unwrap();
        assert_eq!(d.subjects()[0].id, 1);
        assert_eq!(d.event_times(), vec![1.7]);

        let wrong_count = vec![Subject::new(1, 1.7, true, vec![0.0])];
        assert!(matches!(
            Dataset::new(g.clone(), wrong_count, 3.0),
            Err(Error::InvalidSubject { id: 1, .. })
        ));

        let event_at_tau = vec![Subject::new(1, 3.0, true, vec![0.0, 1.0, 2.0])];
        assert!(Dataset::new(g.clone(), event_at_tau, 3.0).is_err());

        let tied = vec![
            Subject::new(1, 1.5, true, vec![0.0, 1.0]),
            Subject::new(2, 1.5, true, vec![0.0, 1.0]),
        ];
        assert!(matches!(
            Dataset::new(g.clone(), tied.clone(), 3.0),
            Err(Error::TiedEventTimes { .. })
        ));
        let jittered = Dataset::with_tie_jitter(g, tied, 3.0).unwrap();
        assert_eq!(jittered.subjects()[0].x, 1.5);
        assert_eq!(jittered.subjects()[1].x, 1.5 + TIE_JITTER);
    }
}
