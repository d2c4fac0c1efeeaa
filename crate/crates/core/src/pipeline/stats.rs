use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::FrameTiming;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

impl LatencySummary {
    /// Nearest-rank percentiles over seconds.
    pub fn of(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return LatencySummary::default();
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        LatencySummary {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            p50: rank(0.50),
            p95: rank(0.95),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub frames: usize,
    /// Seconds from start until the last frame was delivered.
    pub wall_time: f64,
    /// frames / wall_time, or 0 without frames.
    pub throughput: f64,
    pub pre: LatencySummary,
    pub accel: LatencySummary,
    pub post: LatencySummary,
    pub end_to_end: LatencySummary,
}

impl PipelineStats {
    pub(crate) fn from_timings(t: &[FrameTiming], wall: Duration) -> Self {
        let col = |f: fn(&FrameTiming) -> Duration| -> Vec<f64> { t.iter().map(|x| f(x).as_secs_f64()).collect() };
        let wall_time = wall.as_secs_f64();
        PipelineStats {
            frames: t.len(),
            wall_time,
            throughput: if t.is_empty() || wall_time <= 0.0 { 0.0 } else { t.len() as f64 / wall_time },
            pre: LatencySummary::of(&col(|x| x.pre)),
            accel: LatencySummary::of(&col(|x| x.accel)),
            post: LatencySummary::of(&col(|x| x.post)),
            end_to_end: LatencySummary::of(&col(|x| x.end_to_end)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub label: String,
    pub target_hz: f64,
    /// None when there was nothing to measure.
    pub pass: Option<bool>,
    pub stats: PipelineStats,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let s = &self.stats;
        if s.frames == 0 {
            return format!("[{}] no data\n", self.label);
        }
        let lat = |name: &str, l: &LatencySummary| {
            format!(
                "[{}] {name}_ms mean={:.3} p50={:.3} p95={:.3}\n",
                self.label,
                l.mean * 1e3,
                l.p50 * 1e3,
                l.p95 * 1e3
            )
        };
        let mut out = format!(
            "[{}] frames={} wall_time_s={:.6} throughput_hz={:.6} target_hz={:.3} {}\n",
            self.label,
            s.frames,
            s.wall_time,
            s.throughput,
            self.target_hz,
            if self.pass == Some(true) { "PASS" } else { "FAIL" }
        );
        out += &lat("pre", &s.pre);
        out += &lat("accel", &s.accel);
        out += &lat("post", &s.post);
        out += &lat("end_to_end", &s.end_to_end);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

pub fn bench_report(label: &str, stats: &PipelineStats, target_hz: f64) -> BenchReport {
    BenchReport {
        label: label.to_string(),
        target_hz,
        pass: (stats.frames > 0).then_some(stats.throughput >= target_hz),
        stats: stats.clone(),
    }
}
