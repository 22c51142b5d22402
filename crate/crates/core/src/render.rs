//! SVG snapshots of a recorded trace.
//!
//! World coordinates map to pixels by a fixed transform: 100 px per meter,
//! y pointing up, with a 0.5 m margin around everything drawn. Robots are
//! circles of their body radius colored by phase, target cells are outlined
//! squares, and the two starting lines are dashed verticals.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::engine::trace::{Trace, TraceEvent};
use crate::protocol::Phase;
use crate::{Error, Result};

pub const PX_PER_M: f64 = 100.0;
const MARGIN_M: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub tick: u64,
    pub svg: String,
}

/// Ticks 0, stride, 2·stride, ... up to `final_tick`, plus `final_tick` itself.
pub fn frame_ticks(final_tick: u64, stride: u64) -> Result<Vec<u64>> {
    if stride == 0 {
        return Err(Error::domain("frame stride must be positive"));
    }
    let mut ticks: Vec<u64> = (0..=final_tick).step_by(stride as usize).collect();
    if ticks.last() != Some(&final_tick) {
        ticks.push(final_tick);
    }
    Ok(ticks)
}

/// Smallest stride that yields at most `frames` snapshots, endpoints included.
pub fn stride_for(final_tick: u64, frames: u64) -> u64 {
    if frames < 2 {
        return final_tick.max(1);
    }
    final_tick.div_ceil(frames - 1).max(1)
}

pub fn phase_color(phase: Phase) -> &'static str {
    match phase {
        Phase::Phase0Check => "#9e9e9e",
        Phase::WaitRowUnlock => "#616161",
        Phase::Phase1ToStart => "#1e88e5",
        Phase::StagedDelay => "#fdd835",
        Phase::Phase2ToTarget => "#fb8c00",
        Phase::Done => "#43a047",
    }
}

struct View {
    min_x: f64,
    max_y: f64,
    width: f64,
    height: f64,
}

impl View {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.min_x) * PX_PER_M, (self.max_y - y) * PX_PER_M)
    }
}

pub fn render_frames(trace: &Trace, stride: u64) -> Result<Vec<Frame>> {
    let final_tick = trace
        .final_tick()
        .ok_or(Error::Trace { line: 1, message: "trace has no events".into() })?;
    let mut by_tick: BTreeMap<u64, Vec<&TraceEvent>> = BTreeMap::new();
    for e in &trace.events {
        by_tick.entry(e.tick).or_default().push(e);
    }
    let view = view_of(trace);
    frame_ticks(final_tick, stride)?
        .into_iter()
        .map(|tick| {
            let events = by_tick.get(&tick).map(Vec::as_slice).unwrap_or(&[]);
            Ok(Frame { tick, svg: render_one(trace, &view, tick, events) })
        })
        .collect()
}

fn view_of(trace: &Trace) -> View {
    let cfg = &trace.header.config;
    let plan = &trace.header.plan;
    let half = 0.5 * plan.cell_size;
    let mut xs = vec![plan.x_left, plan.x_right];
    let mut ys = Vec::new();
    for t in &cfg.targets {
        xs.extend([t[0] - half, t[0] + half]);
        ys.extend([t[1] - half, t[1] + half]);
    }
    for e in &trace.events {
        xs.push(e.true_pose[0]);
        ys.push(e.true_pose[1]);
    }
    let lo = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (min_x, max_x) = (lo(&xs) - MARGIN_M, hi(&xs) + MARGIN_M);
    let (min_y, max_y) = if ys.is_empty() { (-MARGIN_M, MARGIN_M) } else { (lo(&ys) - MARGIN_M, hi(&ys) + MARGIN_M) };
    View { min_x, max_y, width: (max_x - min_x) * PX_PER_M, height: (max_y - min_y) * PX_PER_M }
}

fn render_one(trace: &Trace, view: &View, tick: u64, events: &[&TraceEvent]) -> String {
    let cfg = &trace.header.config;
    let plan = &trace.header.plan;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.1} {:.1}">"#,
        view.width, view.height, view.width, view.height
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let side = plan.cell_size * PX_PER_M;
    for t in &cfg.targets {
        let (x, y) = view.px(t[0] - 0.5 * plan.cell_size, t[1] + 0.5 * plan.cell_size);
        let _ = writeln!(
            s,
            r##"<rect class="target" x="{x:.1}" y="{y:.1}" width="{side:.1}" height="{side:.1}" fill="none" stroke="#333" stroke-width="1"/>"##
        );
    }
    for line_x in [plan.x_left, plan.x_right] {
        let (x, _) = view.px(line_x, 0.0);
        let _ = writeln!(
            s,
            r##"<line class="start" x1="{x:.1}" y1="0" x2="{x:.1}" y2="{:.1}" stroke="#c62828" stroke-dasharray="6 4"/>"##,
            view.height
        );
    }
    let r = cfg.robot.body_radius * PX_PER_M;
    for e in events {
        let (x, y) = view.px(e.true_pose[0], e.true_pose[1]);
        let _ = writeln!(
            s,
            r#"<circle class="robot" data-id="{}" cx="{x:.1}" cy="{y:.1}" r="{r:.1}" fill="{}" fill-opacity="0.8"/>"#,
            e.robot,
            phase_color(e.phase)
        );
    }
    let _ = writeln!(s, r#"<text x="8" y="20" font-family="monospace" font-size="14">tick {tick}</text>"#);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_tick_arithmetic() {
        assert_eq!(frame_ticks(1000, 200).unwrap(), vec![0, 200, 400, 600, 800, 1000]);
        assert_eq!(frame_ticks(1001, 200).unwrap().len(), 7);
        assert_eq!(frame_ticks(0, 5).unwrap(), vec![0]);
        assert!(frame_ticks(10, 0).is_err());
    }

    #[test]
    fn stride_for_gives_requested_frames() {
        for final_tick in [1, 5, 99, 1000, 5399, 5400, 5401] {
            let n = frame_ticks(final_tick, stride_for(final_tick, 6)).unwrap().len();
            assert!(n <= 6 && (final_tick < 5 || n == 6), "{final_tick}: {n}");
        }
    }
}
