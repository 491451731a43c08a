//! Segmented centric ordering of sampled k-space locations for prospective
//! multi-echo acquisition.
//!
//! Each echo's sampled `(ky, kz)` locations are sorted by angle from the
//! positive `ky` axis and cut into equal angular segments; each segment is
//! then traversed center-out. Concatenating the segments gives one sequence
//! per echo, and TR `t` acquires element `t` of every echo's sequence, so
//! the echoes of one TR stay close together in k-space.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use crate::error::{ensure, Error, Result};
use crate::pattern::BinaryPattern;
use crate::tensor::Rng;

/// Signed offset from the k-space center `(ny / 2, nz / 2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Location {
    pub ky: i32,
    pub kz: i32,
}

impl Location {
    pub fn radius(self) -> f64 {
        ((self.ky as f64).powi(2) + (self.kz as f64).powi(2)).sqrt()
    }

    /// Angle from the positive `ky` axis in `[0, 2 pi)`; 0 at the center.
    pub fn angle(self) -> f64 {
        if self.ky == 0 && self.kz == 0 {
            return 0.0;
        }
        let a = (self.kz as f64).atan2(self.ky as f64);
        if a < 0.0 {
            a + TAU
        } else {
            a
        }
    }

    fn dist(self, other: Location) -> f64 {
        (((self.ky - other.ky) as f64).powi(2) + ((self.kz - other.kz) as f64).powi(2)).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionSchedule {
    /// Number of locations in each segment, in acquisition order.
    pub segment_sizes: Vec<usize>,
    /// `sequences[echo][tr]`.
    pub sequences: Vec<Vec<Location>>,
}

impl AcquisitionSchedule {
    pub fn n_echoes(&self) -> usize {
        self.sequences.len()
    }

    pub fn n_tr(&self) -> usize {
        self.sequences.first().map_or(0, Vec::len)
    }

    pub fn n_segments(&self) -> usize {
        self.segment_sizes.len()
    }

    /// Nominal segment size: the largest actual size.
    pub fn n_ind(&self) -> usize {
        self.segment_sizes.iter().copied().max().unwrap_or(0)
    }

    /// Plain-text table: a `#` header then `tr echo ky kz` rows.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let sizes: Vec<String> = self.segment_sizes.iter().map(|s| s.to_string()).collect();
        writeln!(
            out,
            "# N_s={} N_ind={} N_T={} N_TR={} segment_sizes={}",
            self.n_segments(),
            self.n_ind(),
            self.n_echoes(),
            self.n_tr(),
            sizes.join(",")
        )
        .unwrap();
        for tr in 0..self.n_tr() {
            for (echo, seq) in self.sequences.iter().enumerate() {
                let l = seq[tr];
                writeln!(out, "{tr} {echo} {} {}", l.ky, l.kz).unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid("empty schedule"))?;
        let field = |key: &str| -> Result<&str> {
            header
                .split_whitespace()
                .find_map(|tok| tok.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::invalid(format!("schedule header lacks {key}")))
        };
        let parse = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::invalid(format!("bad number `{s}` in schedule header")))
        };
        let n_echoes = parse(field("N_T")?)?;
        let n_tr = parse(field("N_TR")?)?;
        let segment_sizes = field("segment_sizes")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(parse)
            .collect::<Result<Vec<_>>>()?;
        let mut sequences = vec![Vec::with_capacity(n_tr); n_echoes];
        for (i, line) in lines.enumerate() {
            let v: Vec<i64> = line
                .split_whitespace()
                .map(|t| t.parse::<i64>())
                .collect::<Result<_, _>>()
                .map_err(|_| Error::invalid(format!("bad schedule row {}", i + 2)))?;
            ensure(v.len() == 4, || {
                format!("schedule row {} needs 4 fields", i + 2)
            })?;
            let (tr, echo) = (v[0] as usize, v[1] as usize);
            ensure(echo < n_echoes && tr == sequences[echo].len(), || {
                format!("schedule row {} out of order", i + 2)
            })?;
            sequences[echo].push(Location {
                ky: v[2] as i32,
                kz: v[3] as i32,
            });
        }
        ensure(sequences.iter().all(|s| s.len() == n_tr), || {
            "schedule rows do not cover every (tr, echo)".into()
        })?;
        Ok(AcquisitionSchedule {
            segment_sizes,
            sequences,
        })
    }
}

/// Sampled locations of one `ny x nz` mask slab.
pub fn sampled_locations(mask: &[f64], ny: usize, nz: usize) -> Vec<Location> {
    let (cy, cz) = ((ny / 2) as i32, (nz / 2) as i32);
    mask.iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, _)| Location {
            ky: (i / nz) as i32 - cy,
            kz: (i % nz) as i32 - cz,
        })
        .collect()
}

/// Contiguous segment sizes: `n / s` each, with the remainder going one
/// extra to each of the last `n % s` segments.
pub fn segment_sizes(n: usize, n_segments: usize) -> Vec<usize> {
    let base = n / n_segments;
    let extra = n % n_segments;
    (0..n_segments)
        .map(|i| base + usize::from(i >= n_segments - extra))
        .collect()
}

/// Sorts locations by angle and cuts them into `n_segments` contiguous runs.
pub fn segment_locations(locations: &[Location], n_segments: usize) -> Result<Vec<Vec<Location>>> {
    ensure(n_segments > 0, || "n_segments must be positive".into())?;
    ensure(locations.len() >= n_segments, || {
        format!(
            "{} locations cannot fill {n_segments} non-empty segments",
            locations.len()
        )
    })?;
    let mut sorted = locations.to_vec();
    sorted.sort_by(|a, b| {
        a.angle()
            .total_cmp(&b.angle())
            .then(a.radius().total_cmp(&b.radius()))
            .then(a.cmp(b))
    });
    let mut out = Vec::with_capacity(n_segments);
    let mut rest = sorted.as_slice();
    for size in segment_sizes(locations.len(), n_segments) {
        let (head, tail) = rest.split_at(size);
        out.push(head.to_vec());
        rest = tail;
    }
    Ok(out)
}

/// Center-out order; ties by angle, then `ky`, then `kz`.
pub fn order_within_segment(segment: &[Location]) -> Vec<Location> {
    let mut out = segment.to_vec();
    out.sort_by(|a, b| {
        a.radius()
            .total_cmp(&b.radius())
            .then(a.angle().total_cmp(&b.angle()))
            .then(a.cmp(b))
    });
    out
}

pub fn build_schedule(masks: &BinaryPattern, n_segments: usize) -> Result<AcquisitionSchedule> {
    let (ny, nz) = masks.dims();
    let per_echo: Vec<Vec<Location>> = (0..masks.n_echoes())
        .map(|j| sampled_locations(masks.u.slab(j), ny, nz))
        .collect();
    let n = per_echo[0].len();
    ensure(per_echo.iter().all(|l| l.len() == n), || {
        let counts: Vec<usize> = per_echo.iter().map(Vec::len).collect();
        format!("echoes have unequal sample counts {counts:?}")
    })?;
    let mut sequences = Vec::with_capacity(per_echo.len());
    for locs in &per_echo {
        let segments = segment_locations(locs, n_segments)?;
        sequences.push(
            segments
                .iter()
                .flat_map(|s| order_within_segment(s))
                .collect(),
        );
    }
    Ok(AcquisitionSchedule {
        segment_sizes: segment_sizes(n, n_segments),
        sequences,
    })
}

/// The same sampled sets visited in an independent random order per echo.
pub fn shuffled_schedule(masks: &BinaryPattern, rng: &mut Rng) -> Result<AcquisitionSchedule> {
    let mut s = build_schedule(masks, 1)?;
    for seq in &mut s.sequences {
        rng.shuffle(seq);
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpStats {
    /// Per TR: summed distance between consecutive echoes.
    pub intra_mean: f64,
    pub intra_max: f64,
    /// Between the last echo of TR `t` and the first echo of TR `t + 1`.
    pub inter_mean: f64,
    pub inter_max: f64,
}

pub fn encoding_jump_metric(s: &AcquisitionSchedule) -> JumpStats {
    let n_tr = s.n_tr();
    let ne = s.n_echoes();
    let mut intra = Vec::with_capacity(n_tr);
    for t in 0..n_tr {
        let jump: f64 = (1..ne)
            .map(|j| s.sequences[j][t].dist(s.sequences[j - 1][t]))
            .sum();
        intra.push(jump);
    }
    let inter: Vec<f64> = (1..n_tr)
        .map(|t| s.sequences[0][t].dist(s.sequences[ne - 1][t - 1]))
        .collect();
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    JumpStats {
        intra_mean: mean(&intra),
        intra_max: max(&intra),
        inter_mean: mean(&inter),
        inter_max: max(&inter),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RealTensor;
    use std::collections::HashSet;

    fn loc(ky: i32, kz: i32) -> Location {
        Location { ky, kz }
    }

    fn pattern(nt: usize, ny: usize, nz: usize, on: &[&[(i32, i32)]]) -> BinaryPattern {
        let mut u = RealTensor::zeros(&[nt, ny, nz]);
        for (j, locs) in on.iter().enumerate() {
            for &(ky, kz) in *locs {
                let i = (ky + (ny / 2) as i32) as usize * nz + (kz + (nz / 2) as i32) as usize;
                u.slab_mut(j)[i] = 1.0;
            }
        }
        BinaryPattern { u, calib_size: 0 }
    }

    #[test]
    fn eight_directions_into_four_segments() {
        // angles 0, 45, ..., 315 degrees
        let dirs = [
            (2, 0),
            (2, 2),
            (0, 2),
            (-2, 2),
            (-2, 0),
            (-2, -2),
            (0, -2),
            (2, -2),
        ];
        let mut locs: Vec<Location> = dirs.iter().map(|&(y, z)| loc(y, z)).collect();
        locs.reverse();
        let segs = segment_locations(&locs, 4).unwrap();
        let expect: Vec<Vec<Location>> = dirs
            .chunks(2)
            .map(|c| c.iter().map(|&(y, z)| loc(y, z)).collect())
            .collect();
        assert_eq!(segs, expect);
        assert_eq!(segment_locations(&locs, 1).unwrap().len(), 1);
        assert!(segment_locations(&locs, 0).is_err());
    }

    #[test]
    fn paper_protocol_segment_sizes() {
        // 206 x 80 at R = 8, 11 segments: 2068 = 188 * 11 locations
        assert_eq!(segment_sizes(2068, 11), vec![188; 11]);
        let nominal = segment_sizes(206 * 80 / 8, 11);
        assert_eq!(nominal.iter().sum::<usize>(), 2060);
        assert_eq!(nominal.iter().filter(|&&s| s == 188).count(), 3);
        assert_eq!(nominal.iter().filter(|&&s| s == 187).count(), 8);
        assert_eq!(&nominal[8..], &[188, 188, 188]);
    }

    #[test]
    fn center_out_with_angle_tiebreak() {
        let seg = [loc(3, 0), loc(1, 0), loc(0, 2)];
        assert_eq!(
            order_within_segment(&seg),
            vec![loc(1, 0), loc(0, 2), loc(3, 0)]
        );
        // equal radius: 90 degrees comes before 180 degrees
        let tie = [loc(-1, 0), loc(0, 1)];
        assert_eq!(order_within_segment(&tie), vec![loc(0, 1), loc(-1, 0)]);
        assert_eq!(order_within_segment(&[loc(4, 4)]), vec![loc(4, 4)]);
    }

    #[test]
    fn hand_computed_two_echo_table() {
        // echo 0: angles 0, 90, 180, 270 at radius 1 and 2
        // echo 1: the same directions at other radii
        let p = pattern(
            2,
            8,
            8,
            &[
                &[(1, 0), (0, 2), (-1, 0), (0, -2)],
                &[(2, 0), (0, 1), (-3, 0), (0, -1)],
            ],
        );
        let s = build_schedule(&p, 2).unwrap();
        assert_eq!(s.segment_sizes, vec![2, 2]);
        // segment 1 = {0 deg, 90 deg}, segment 2 = {180 deg, 270 deg}
        assert_eq!(
            s.sequences[0],
            vec![loc(1, 0), loc(0, 2), loc(-1, 0), loc(0, -2)]
        );
        assert_eq!(
            s.sequences[1],
            vec![loc(0, 1), loc(2, 0), loc(0, -1), loc(-3, 0)]
        );
        let text = s.to_text();
        assert!(text.starts_with("# N_s=2 N_ind=2 N_T=2 N_TR=4 segment_sizes=2,2\n"));
        assert!(text.contains("\n0 1 0 1\n"));
        assert_eq!(AcquisitionSchedule::from_text(&text).unwrap(), s);
    }

    #[test]
    fn identical_masks_have_zero_intra_jump() {
        let locs: &[(i32, i32)] = &[(1, 1), (2, -1), (-3, 0), (0, 3), (1, -2), (-1, -1)];
        let p = pattern(3, 8, 8, &[locs, locs, locs]);
        let s = build_schedule(&p, 3).unwrap();
        assert_eq!(encoding_jump_metric(&s).intra_mean, 0.0);
        let single = pattern(1, 8, 8, &[locs]);
        assert_eq!(
            encoding_jump_metric(&build_schedule(&single, 2).unwrap()).intra_max,
            0.0
        );
    }

    #[test]
    fn unequal_counts_are_rejected() {
        let p = pattern(2, 8, 8, &[&[(1, 1), (2, 2)], &[(1, 1)]]);
        assert!(build_schedule(&p, 1).is_err());
    }

    #[test]
    fn coverage_and_monotone_radii() {
        let mut rng = Rng::new(4);
        let prob = crate::pattern::ProbPattern {
            p: RealTensor::full(&[3, 30, 20], 0.2),
        };
        let masks = crate::pattern::sample_fixed_count(&prob, 121, &mut rng, 4).unwrap();
        let s = build_schedule(&masks, 7).unwrap();
        assert!(s.segment_sizes.iter().all(|&n| n == 17 || n == 18));
        for j in 0..3 {
            let got: HashSet<Location> = s.sequences[j].iter().copied().collect();
            let want: HashSet<Location> = sampled_locations(masks.u.slab(j), 30, 20)
                .into_iter()
                .collect();
            assert_eq!(got.len(), s.n_tr());
            assert_eq!(got, want);
            let mut start = 0;
            for &size in &s.segment_sizes {
                let seg = &s.sequences[j][start..start + size];
                assert!(seg.windows(2).all(|w| w[0].radius() <= w[1].radius()));
                start += size;
            }
        }
        let shuffled = shuffled_schedule(&masks, &mut rng).unwrap();
        assert!(encoding_jump_metric(&s).intra_mean < encoding_jump_metric(&shuffled).intra_mean);
    }
}
