//! Marching-squares isolines over a [`FieldGrid`].

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::FieldGrid;

/// One isoline. Closed polylines do not repeat their first vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub level: f64,
    pub closed: bool,
    pub points: Vec<(f64, f64)>,
}

pub const CONTOUR_HEADER: &str = "# gravinv-contours v1";

// Edge ids: 2*(j*nx+i) is the horizontal edge (i,j)-(i+1,j),
// 2*(j*nx+i)+1 the vertical edge (i,j)-(i,j+1).
fn h_edge(nx: usize, i: usize, j: usize) -> usize {
    2 * (j * nx + i)
}

fn v_edge(nx: usize, i: usize, j: usize) -> usize {
    2 * (j * nx + i) + 1
}

fn edge_point(g: &FieldGrid, edge: usize, level: f64) -> (f64, f64) {
    let nx = g.spec.nx;
    let node = edge / 2;
    let (i, j) = (node % nx, node / nx);
    let (i2, j2) = if edge.is_multiple_of(2) { (i + 1, j) } else { (i, j + 1) };
    let a = g.at(i, j);
    let b = g.at(i2, j2);
    let t = if b == a { 0.5 } else { (level - a) / (b - a) };
    let (xa, ya) = (g.spec.x(i), g.spec.y(j));
    let (xb, yb) = (g.spec.x(i2), g.spec.y(j2));
    (xa + t * (xb - xa), ya + t * (yb - ya))
}

fn cell_segments(g: &FieldGrid, i: usize, j: usize, level: f64, out: &mut Vec<(usize, usize)>) {
    let nx = g.spec.nx;
    let v = [g.at(i, j), g.at(i + 1, j), g.at(i + 1, j + 1), g.at(i, j + 1)];
    let mut case = 0;
    for (k, val) in v.iter().enumerate() {
        if *val >= level {
            case |= 1 << k;
        }
    }
    // edges: bottom, right, top, left
    let b = h_edge(nx, i, j);
    let r = v_edge(nx, i + 1, j);
    let t = h_edge(nx, i, j + 1);
    let l = v_edge(nx, i, j);
    let center_high = (v.iter().sum::<f64>() / 4.0) >= level;
    match case {
        0 | 15 => {}
        1 | 14 => out.push((l, b)),
        2 | 13 => out.push((b, r)),
        3 | 12 => out.push((l, r)),
        4 | 11 => out.push((r, t)),
        6 | 9 => out.push((b, t)),
        7 | 8 => out.push((l, t)),
        5 => {
            if center_high {
                out.push((l, t));
                out.push((b, r));
            } else {
                out.push((l, b));
                out.push((r, t));
            }
        }
        10 => {
            if center_high {
                out.push((l, b));
                out.push((r, t));
            } else {
                out.push((l, t));
                out.push((b, r));
            }
        }
        _ => unreachable!(),
    }
}

/// Isolines of `g` at each level, segments chained into polylines.
pub fn extract_contours(g: &FieldGrid, levels: &[f64]) -> Result<Vec<Polyline>> {
    if let Some(l) = levels.iter().find(|l| !l.is_finite()) {
        return Err(Error::Invalid(format!("contour level {l} is not finite")));
    }
    let (nx, ny) = (g.spec.nx, g.spec.ny);
    let mut all = Vec::new();
    for &level in levels {
        let mut segs = Vec::new();
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                cell_segments(g, i, j, level, &mut segs);
            }
        }
        all.extend(chain(g, &segs, level));
    }
    Ok(all)
}

fn chain(g: &FieldGrid, segs: &[(usize, usize)], level: f64) -> Vec<Polyline> {
    let mut by_edge: HashMap<usize, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segs.iter().enumerate() {
        by_edge.entry(*a).or_default().push(k);
        by_edge.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segs.len()];
    let mut lines = Vec::new();

    let walk = |start_edge: usize, first: usize, used: &mut Vec<bool>| -> (Vec<usize>, bool) {
        let mut edges = vec![start_edge];
        let mut seg = first;
        let mut at = start_edge;
        loop {
            used[seg] = true;
            let (a, b) = segs[seg];
            let next = if a == at { b } else { a };
            if next == start_edge {
                return (edges, true);
            }
            edges.push(next);
            at = next;
            match by_edge[&next].iter().find(|s| !used[**s]) {
                Some(s) => seg = *s,
                None => return (edges, false),
            }
        }
    };

    // open chains start at edges touched by a single segment (grid boundary)
    let mut ends: Vec<usize> = by_edge.iter().filter(|(_, v)| v.len() == 1).map(|(e, _)| *e).collect();
    ends.sort_unstable();
    for e in ends {
        let s = by_edge[&e][0];
        if used[s] {
            continue;
        }
        let (edges, closed) = walk(e, s, &mut used);
        lines.push((edges, closed));
    }
    for k in 0..segs.len() {
        if used[k] {
            continue;
        }
        let (edges, closed) = walk(segs[k].0, k, &mut used);
        lines.push((edges, closed));
    }
    lines
        .into_iter()
        .map(|(edges, closed)| Polyline {
            level,
            closed,
            points: edges.iter().map(|e| edge_point(g, *e, level)).collect(),
        })
        .collect()
}

pub fn contours_to_text(lines: &[Polyline]) -> String {
    let mut out = String::new();
    out.push_str(CONTOUR_HEADER);
    out.push('\n');
    out.push_str("level_mgal,polyline_id,closed,x_km,y_km\n");
    for (id, pl) in lines.iter().enumerate() {
        for (x, y) in &pl.points {
            let _ = writeln!(out, "{},{},{},{},{}", pl.level, id, u8::from(pl.closed), x, y);
        }
    }
    out
}

pub fn contours_from_text(text: &str, path: &str) -> Result<Vec<Polyline>> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CONTOUR_HEADER) {
        return Err(perr(1, format!("expected `{CONTOUR_HEADER}`")));
    }
    lines.next();
    let mut out: Vec<Polyline> = Vec::new();
    let mut last_id = None;
    for (k, line) in lines.enumerate() {
        let n = k + 3;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(perr(n, "expected 5 fields".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| perr(n, format!("`{s}`: {e}")));
        let id: usize = f[1].parse().map_err(|e| perr(n, format!("polyline id: {e}")))?;
        let closed = match f[2] {
            "0" => false,
            "1" => true,
            other => return Err(perr(n, format!("closed flag must be 0 or 1, got `{other}`"))),
        };
        let level = num(f[0])?;
        if last_id != Some(id) {
            out.push(Polyline {
                level,
                closed,
                points: Vec::new(),
            });
            last_id = Some(id);
        }
        out.last_mut().unwrap().points.push((num(f[3])?, num(f[4])?));
    }
    Ok(out)
}

pub fn read_contours(path: impl AsRef<Path>) -> Result<Vec<Polyline>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    contours_from_text(&text, &path.display().to_string())
}

pub fn write_contours(lines: &[Polyline], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, contours_to_text(lines)).map_err(|e| Error::io(path, e))
}

/// `n` levels evenly spaced strictly inside the grid's value range.
pub fn even_levels(g: &FieldGrid, n: usize) -> Vec<f64> {
    let (lo, hi) = (g.min(), g.max());
    (1..=n).map(|k| lo + (hi - lo) * k as f64 / (n + 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Execution;
    use crate::grid::GridSpec;

    fn radial() -> FieldGrid {
        let spec = GridSpec::new((-5.0, 5.0), 41, (-5.0, 5.0), 41).unwrap();
        FieldGrid::from_fn(spec, Execution::Sequential, |p| 10.0 - (p.x * p.x + p.y * p.y).sqrt()).unwrap()
    }

    #[test]
    fn constant_grid_has_no_contours() {
        let spec = GridSpec::new((0.0, 1.0), 5, (0.0, 1.0), 5).unwrap();
        let g = FieldGrid::new(spec, vec![3.0; 25]).unwrap();
        assert!(extract_contours(&g, &[1.0, 5.0]).unwrap().is_empty());
    }

    #[test]
    fn level_above_max_is_empty() {
        let g = radial();
        assert!(extract_contours(&g, &[g.max() + 1.0]).unwrap().is_empty());
    }

    #[test]
    fn radial_level_is_one_closed_ring() {
        let g = radial();
        let lines = extract_contours(&g, &[7.0]).unwrap();
        assert_eq!(lines.len(), 1);
        assert!(lines[0].closed);
        for &(x, y) in &lines[0].points {
            let v = g.interpolate(x, y).unwrap();
            assert!((v - 7.0).abs() < 1e-9, "{v}");
            assert!(((x * x + y * y).sqrt() - 3.0).abs() < 0.05);
        }
    }

    #[test]
    fn boundary_crossing_lines_are_open() {
        let spec = GridSpec::new((0.0, 4.0), 5, (0.0, 4.0), 5).unwrap();
        let g = FieldGrid::from_fn(spec, Execution::Sequential, |p| p.x).unwrap();
        let lines = extract_contours(&g, &[2.5]).unwrap();
        assert_eq!(lines.len(), 1);
        assert!(!lines[0].closed);
        assert_eq!(lines[0].points.len(), 5);
    }

    #[test]
    fn non_finite_level_rejected() {
        assert!(extract_contours(&radial(), &[f64::NAN]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let g = radial();
        let lines = extract_contours(&g, &even_levels(&g, 4)).unwrap();
        let back = contours_from_text(&contours_to_text(&lines), "c").unwrap();
        assert_eq!(back, lines);
    }
}
