//! Per-junction weight histograms.

use super::{ModelError, SparseMlp};

/// Histogram range and resolution. The default covers `[-0.70, 0.70)` in
/// 20 bins of width 0.07, so bin edges land on multiples of 0.07 and the
/// near-zero mass sits in exactly two central bins.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramSpec {
    pub lo: f64,
    pub hi: f64,
    pub bin_width: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec { lo: -0.70, hi: 0.70, bin_width: 0.07 }
    }
}

impl HistogramSpec {
    /// The i-th bin edge, `0..=bins`. Interpolated between the endpoints
    /// (rather than accumulated from `lo`) so that edge 0 is exactly `lo`,
    /// edge `bins` exactly `hi`, and symmetric ranges get an exact central
    /// edge — with the default range, 0.0 is an edge, not `1.1e-16`.
    pub fn edge(&self, bins: usize, i: usize) -> f64 {
        (self.lo * (bins - i) as f64 + self.hi * i as f64) / bins as f64
    }

    /// Number of bins, validating that the width tiles the range.
    pub fn bin_count(&self) -> Result<usize, ModelError> {
        if !(self.bin_width > 0.0) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(ModelError::BadRange(format!(
                "lo {} hi {} bin_width {}",
                self.lo, self.hi, self.bin_width
            )));
        }
        if self.lo >= self.hi {
            return Err(ModelError::BadRange(format!("lo {} >= hi {}", self.lo, self.hi)));
        }
        let span = self.hi - self.lo;
        let bins = (span / self.bin_width).round();
        if bins < 1.0 || bins > 1e6 {
            return Err(ModelError::BadRange(format!("{bins} bins")));
        }
        if ((bins * self.bin_width - span) / span).abs() > 1e-9 {
            return Err(ModelError::BadRange(format!(
                "bin width {} does not tile [{}, {})",
                self.bin_width, self.lo, self.hi
            )));
        }
        Ok(bins as usize)
    }
}

/// Histogram of one junction's weights. Bins are half-open
/// `[edge, edge + bin_width)`; weights off either end are tallied in the
/// side counts, never silently dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightHistogram {
    pub junction: usize,
    pub bin_left_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
}

impl WeightHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.below + self.above
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left_edge,count\n");
        for (edge, count) in self.bin_left_edges.iter().zip(&self.counts) {
            out.push_str(&format!("{edge:.6},{count}\n"));
        }
        out
    }
}

/// Histogram the weights of junction `junction` (0-based).
pub fn weight_histogram(
    model: &SparseMlp,
    junction: usize,
    spec: &HistogramSpec,
) -> Result<WeightHistogram, ModelError> {
    if junction >= model.config().junction_count() {
        return Err(ModelError::BadJunctionIndex {
            index: junction,
            count: model.config().junction_count(),
        });
    }
    let bins = spec.bin_count()?;
    let mut counts = vec![0u64; bins];
    let mut below = 0u64;
    let mut above = 0u64;
    for &w in model.junction(junction).weights() {
        let w = w as f64;
        if w < spec.lo {
            below += 1;
            continue;
        }
        if w >= spec.hi {
            above += 1;
            continue;
        }
        let mut idx = (((w - spec.lo) / spec.bin_width).floor() as i64).clamp(0, bins as i64 - 1);
        // The division can land one bin off when w sits on an interior
        // edge (e.g. (0.0 + 0.70) / 0.07 floors to 9, not 10); nudge the
        // index until the half-open invariant holds against the published
        // edges.
        while idx + 1 < bins as i64 && w >= spec.edge(bins, idx as usize + 1) {
            idx += 1;
        }
        while idx > 0 && w < spec.edge(bins, idx as usize) {
            idx -= 1;
        }
        counts[idx as usize] += 1;
    }
    let bin_left_edges = (0..bins).map(|i| spec.edge(bins, i)).collect();
    Ok(WeightHistogram { junction, bin_left_edges, counts, below, above })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::init_model;
    use crate::topology::NeuronalConfig;

    fn model_with_weights(ws: &[f32]) -> SparseMlp {
        let cfg = NeuronalConfig::full(vec![ws.len(), 1]).unwrap();
        let mut m = init_model(&cfg, 0).unwrap();
        m.junctions_mut()[0].weights_mut().copy_from_slice(ws);
        m
    }

    #[test]
    fn default_spec_has_twenty_bins_on_multiples_of_0_07() {
        let spec = HistogramSpec::default();
        assert_eq!(spec.bin_count().unwrap(), 20);
        let m = model_with_weights(&[0.0]);
        let h = weight_histogram(&m, 0, &spec).unwrap();
        assert_eq!(h.bin_left_edges.len(), 20);
        assert!((h.bin_left_edges[0] + 0.70).abs() < 1e-12);
        assert!((h.bin_left_edges[10] - 0.0).abs() < 1e-12);
        assert!((h.bin_left_edges[19] - 0.63).abs() < 1e-12);
    }

    #[test]
    fn counts_land_in_half_open_bins_with_side_tallies() {
        // Weights: below-range, mid-bin, just under zero, zero, above-range.
        // (Note f32 0.70 widens to just under the f64 edge, so it counts as
        // in-range — boundary semantics are tested below with exactly
        // representable edges.)
        let m = model_with_weights(&[-0.75, -0.05, -1e-6, 0.0, 0.70, 2.0]);
        let h = weight_histogram(&m, 0, &HistogramSpec::default()).unwrap();
        assert_eq!(h.below, 1);
        assert_eq!(h.above, 1); // 2.0
        assert_eq!(h.counts[9], 2); // [-0.07, 0): -0.05 and -1e-6
        assert_eq!(h.counts[10], 1); // [0, 0.07): 0.0
        assert_eq!(h.counts[19], 1); // [0.63, 0.70): f32 0.70
        assert_eq!(h.total(), 6);
    }

    #[test]
    fn boundaries_are_half_open_at_exactly_representable_edges() {
        let spec = HistogramSpec { lo: -1.0, hi: 1.0, bin_width: 0.25 };
        assert_eq!(spec.bin_count().unwrap(), 8);
        let m = model_with_weights(&[-1.0, -0.25, 0.75, 1.0]);
        let h = weight_histogram(&m, 0, &spec).unwrap();
        assert_eq!(h.counts[0], 1); // lo itself is included
        assert_eq!(h.counts[3], 1); // -0.25 starts its own bin
        assert_eq!(h.counts[7], 1); // 0.75 starts the last bin
        assert_eq!(h.above, 1); // hi itself is excluded
        assert_eq!(h.below, 0);
    }

    #[test]
    fn rejects_bad_ranges_and_bad_junction() {
        let m = model_with_weights(&[0.0]);
        for spec in [
            HistogramSpec { lo: 0.5, hi: -0.5, bin_width: 0.1 },
            HistogramSpec { lo: -0.5, hi: 0.5, bin_width: 0.0 },
            HistogramSpec { lo: -0.5, hi: 0.5, bin_width: -0.1 },
            HistogramSpec { lo: -0.5, hi: 0.5, bin_width: 0.3 }, // does not tile
        ] {
            assert!(weight_histogram(&m, 0, &spec).is_err(), "{spec:?}");
        }
        assert!(matches!(
            weight_histogram(&m, 1, &HistogramSpec::default()),
            Err(ModelError::BadJunctionIndex { index: 1, count: 1 })
        ));
    }

    #[test]
    fn csv_lists_bins_in_order() {
        let m = model_with_weights(&[0.1, 0.1, -0.3]);
        let h = weight_histogram(&m, 0, &HistogramSpec::default()).unwrap();
        let csv = h.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("bin_left_edge,count"));
        assert_eq!(csv.lines().count(), 21);
        assert!(csv.contains("0.070000,2"));
        assert!(csv.contains("-0.350000,1"));
    }
}
