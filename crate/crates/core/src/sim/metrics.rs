use std::io::Write;

use serde::Serialize;

/// Sampled trajectory and end-of-run statistics of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSeries {
    pub sample_every: u64,
    pub horizon: u64,
    pub queue_labels: Vec<String>,
    /// Slot count `n` at each sample (state `Q^n`, `p^n`).
    pub slots: Vec<u64>,
    pub queue_lengths: Vec<Vec<u64>>,
    pub allocation: Vec<Vec<f64>>,
    /// Running fraction of slots with every queue nonempty, at each sample.
    pub nonempty_fraction: Vec<f64>,
    pub final_queue_lengths: Vec<u64>,
    pub final_allocation: Vec<f64>,
    /// `Q^N / N` per queue.
    pub q_over_n: Vec<f64>,
    pub nonempty_fraction_total: f64,
    /// Fraction of slots in the final half with every queue nonempty.
    pub nonempty_fraction_tail: f64,
    /// Mean queue length over the final half of the run.
    pub mean_queue_tail: Vec<f64>,
    pub arrivals: Vec<u64>,
    pub departures: Vec<u64>,
    pub conservation_checks: u64,
    pub conservation_violations: u64,
    pub max_abs_delta_q: i64,
}

impl MetricsSeries {
    pub fn max_q_over_n(&self) -> f64 {
        self.q_over_n.iter().copied().fold(0.0, f64::max)
    }

    /// Writes `slot, q..., p..., nonempty_fraction`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let dim = self.final_allocation.len();
        let mut header = vec!["slot".to_string()];
        header.extend(self.queue_labels.iter().cloned());
        header.extend((1..=dim).map(|k| format!("p{k}")));
        header.push("nonempty_fraction".into());
        w.write_record(&header)?;
        for i in 0..self.slots.len() {
            let mut row = vec![self.slots[i].to_string()];
            row.extend(self.queue_lengths[i].iter().map(u64::to_string));
            row.extend(self.allocation[i].iter().map(f64::to_string));
            row.push(self.nonempty_fraction[i].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Streaming accumulator behind [`MetricsSeries`].
#[derive(Debug, Clone)]
pub(crate) struct MetricsRecorder {
    series: MetricsSeries,
    all_nonempty: u64,
    tail_start: u64,
    tail_slots: u64,
    tail_nonempty: u64,
    tail_sums: Vec<u128>,
}

impl MetricsRecorder {
    pub fn new(labels: Vec<String>, horizon: u64, stride: u64) -> Self {
        let n = labels.len();
        Self {
            series: MetricsSeries {
                sample_every: stride.max(1),
                horizon,
                queue_labels: labels,
                slots: Vec::new(),
                queue_lengths: Vec::new(),
                allocation: Vec::new(),
                nonempty_fraction: Vec::new(),
                final_queue_lengths: Vec::new(),
                final_allocation: Vec::new(),
                q_over_n: Vec::new(),
                nonempty_fraction_total: 0.0,
                nonempty_fraction_tail: 0.0,
                mean_queue_tail: vec![0.0; n],
                arrivals: Vec::new(),
                departures: Vec::new(),
                conservation_checks: 0,
                conservation_violations: 0,
                max_abs_delta_q: 0,
            },
            all_nonempty: 0,
            tail_start: horizon / 2,
            tail_slots: 0,
            tail_nonempty: 0,
            tail_sums: vec![0; n],
        }
    }

    /// Records slot `n` (0-based) given its start-of-slot lengths and the change it produced.
    pub fn record_slot(&mut self, n: u64, start_lengths: &[u64], delta_q: &[i64]) {
        let all = start_lengths.iter().all(|&q| q > 0);
        if all {
            self.all_nonempty += 1;
        }
        if n >= self.tail_start {
            self.tail_slots += 1;
            if all {
                self.tail_nonempty += 1;
            }
            for (s, &q) in self.tail_sums.iter_mut().zip(start_lengths) {
                *s += q as u128;
            }
        }
        let m = delta_q.iter().map(|d| d.abs()).max().unwrap_or(0);
        self.series.max_abs_delta_q = self.series.max_abs_delta_q.max(m);
    }

    pub fn wants_sample(&self, slots_done: u64) -> bool {
        slots_done.is_multiple_of(self.series.sample_every)
    }

    pub fn sample(&mut self, slots_done: u64, lengths: Vec<u64>, allocation: Vec<f64>) {
        self.series.slots.push(slots_done);
        self.series.queue_lengths.push(lengths);
        self.series.allocation.push(allocation);
        self.series
            .nonempty_fraction
            .push(self.all_nonempty as f64 / slots_done.max(1) as f64);
    }

    pub fn conservation(&mut self, checks: u64, violations: u64) {
        self.series.conservation_checks = checks;
        self.series.conservation_violations = violations;
    }

    pub fn finish(
        mut self,
        slots_done: u64,
        lengths: Vec<u64>,
        allocation: Vec<f64>,
        arrivals: Vec<u64>,
        departures: Vec<u64>,
    ) -> MetricsSeries {
        let s = &mut self.series;
        let n = slots_done.max(1) as f64;
        s.q_over_n = lengths.iter().map(|&q| q as f64 / n).collect();
        s.nonempty_fraction_total = self.all_nonempty as f64 / n;
        if self.tail_slots > 0 {
            let t = self.tail_slots as f64;
            s.nonempty_fraction_tail = self.tail_nonempty as f64 / t;
            s.mean_queue_tail = self.tail_sums.iter().map(|&v| v as f64 / t).collect();
        }
        s.final_queue_lengths = lengths;
        s.final_allocation = allocation;
        s.arrivals = arrivals;
        s.departures = departures;
        self.series
    }
}
