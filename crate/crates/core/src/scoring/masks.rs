//! Union-mask IoU and instance-level IoU.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::assignment::lexicographic_assignment;
use crate::datastore::{BitMask, MaskSet};
use crate::error::{Error, Result};

/// One-to-one association of instances between two mask sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(x, y)`: instance `x` of the first set matched to instance `y` of the
    /// second, sorted by `x`.
    pub matched_pairs: Vec<(usize, usize)>,
    /// Sum of `-IoU` over matched pairs.
    pub total_cost: f64,
}

fn check_dims(a: &MaskSet, b: &MaskSet) -> Result<()> {
    if a.width() == b.width() && a.height() == b.height() {
        Ok(())
    } else {
        Err(Error::dims(
            format!("{}x{}", a.width(), a.height()),
            format!("{}x{}", b.width(), b.height()),
        ))
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// IoU of two single masks; zero when either is empty.
pub fn binary_iou(a: &BitMask, b: &BitMask) -> Result<f64> {
    let inter = a.intersection_count(b)?;
    if a.count() == 0 || b.count() == 0 {
        return Ok(0.0);
    }
    Ok(ratio(inter, a.union_count(b)?))
}

/// IoU of the two union masks.
pub fn mask_iou(a: &MaskSet, b: &MaskSet) -> Result<f64> {
    check_dims(a, b)?;
    binary_iou(&a.union(), &b.union())
}

fn raw_assignment(a: &MaskSet, b: &MaskSet) -> Result<Assignment> {
    let cost = a
        .instances()
        .iter()
        .map(|x| {
            b.instances()
                .iter()
                .map(|y| binary_iou(x, y).map(|iou| -iou))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let (matched_pairs, total_cost) = lexicographic_assignment(&cost);
    Ok(Assignment {
        matched_pairs,
        total_cost,
    })
}

/// Canonical orientation: fewer instances first, then by run-length content.
fn orientation(a: &MaskSet, b: &MaskSet) -> Ordering {
    a.instance_count().cmp(&b.instance_count()).then_with(|| {
        let ra: Vec<Vec<u64>> = a.instances().iter().map(BitMask::to_rle).collect();
        let rb: Vec<Vec<u64>> = b.instances().iter().map(BitMask::to_rle).collect();
        ra.cmp(&rb)
    })
}

/// Minimum total `-IoU` matching between instances.
///
/// The solver runs on the canonically ordered pair of sets, so swapping the
/// arguments yields the same matching with coordinates swapped. Among
/// equal-cost matchings, the lexicographically smallest pair list in the
/// canonical orientation wins. Zero-IoU pairs stay in the matching.
pub fn assign_instances(a: &MaskSet, b: &MaskSet) -> Result<Assignment> {
    check_dims(a, b)?;
    if orientation(a, b) == Ordering::Greater {
        let mut swapped = raw_assignment(b, a)?;
        for p in &mut swapped.matched_pairs {
            *p = (p.1, p.0);
        }
        swapped.matched_pairs.sort_unstable();
        Ok(swapped)
    } else {
        raw_assignment(a, b)
    }
}

/// Instance-level IoU: pixels shared by assigned instance pairs over the
/// union of both union masks.
///
/// The numerator counts each pixel once even if instances within a set
/// overlap, which keeps the score within `[0, mask_iou]`. With disjoint
/// instances it equals the sum of per-pair intersections.
pub fn instance_iou(a: &MaskSet, b: &MaskSet) -> Result<f64> {
    check_dims(a, b)?;
    let (ua, ub) = (a.union(), b.union());
    if a.instance_count() == 0 || b.instance_count() == 0 || ua.count() == 0 || ub.count() == 0 {
        return Ok(0.0);
    }
    let assignment = assign_instances(a, b)?;
    let mut shared = BitMask::empty(a.width(), a.height());
    for &(x, y) in &assignment.matched_pairs {
        shared.union_with(&a.instances()[x].intersection(&b.instances()[y])?)?;
    }
    Ok(ratio(shared.count(), ua.union_count(&ub)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(instances: &[&[(u32, u32)]]) -> MaskSet {
        let masks = instances
            .iter()
            .map(|px| BitMask::from_pixels(4, 4, px).unwrap())
            .collect();
        MaskSet::new("m", 1, 4, 4, masks).unwrap()
    }

    /// Enumerates every injective matching of the smaller set into the larger.
    fn brute_force_iiou(a: &MaskSet, b: &MaskSet) -> (f64, f64) {
        fn perms(n: usize, k: usize) -> Vec<Vec<usize>> {
            if k == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in perms(n, k - 1) {
                for c in 0..n {
                    if !p.contains(&c) {
                        let mut q = p.clone();
                        q.push(c);
                        out.push(q);
                    }
                }
            }
            out
        }
        let (u, v) = (a.instance_count(), b.instance_count());
        assert!(u <= v);
        let union = a.union().union_count(&b.union()).unwrap() as f64;
        let mut best_cost = f64::INFINITY;
        let mut best_value = 0.0;
        for p in perms(v, u) {
            let mut cost = 0.0;
            let mut inter = 0u64;
            for (x, &y) in p.iter().enumerate() {
                cost -= binary_iou(&a.instances()[x], &b.instances()[y]).unwrap();
                inter += a.instances()[x].intersection_count(&b.instances()[y]).unwrap();
            }
            if cost < best_cost - 1e-12 {
                best_cost = cost;
                best_value = inter as f64 / union;
            }
        }
        (best_cost, best_value)
    }

    #[test]
    fn union_iou_examples() {
        let a = set(&[&[(0, 0), (1, 0), (0, 1), (1, 1)]]);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let disjoint = set(&[&[(3, 3)]]);
        assert_eq!(mask_iou(&a, &disjoint).unwrap(), 0.0);
        assert_eq!(mask_iou(&a, &set(&[])).unwrap(), 0.0);
        // 4 px vs 4 px sharing 2 px: union 6.
        let b = set(&[&[(1, 0), (2, 0), (1, 1), (2, 1)]]);
        assert!((mask_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn two_instance_fixture() {
        let a = set(&[&[(0, 0), (0, 1)], &[(3, 3)]]);
        let b = set(&[&[(0, 1), (0, 2)], &[(3, 3)]]);
        let assignment = assign_instances(&a, &b).unwrap();
        assert_eq!(assignment.matched_pairs, vec![(0, 0), (1, 1)]);
        assert!((assignment.total_cost + 4.0 / 3.0).abs() < 1e-12);
        let (cost, value) = brute_force_iiou(&a, &b);
        assert!((cost - assignment.total_cost).abs() < 1e-12);
        assert_eq!(value, 0.5);
        assert_eq!(instance_iou(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn single_cross_pair() {
        let a = set(&[&[(0, 0)]]);
        let b = set(&[&[(2, 2)]]);
        assert_eq!(assign_instances(&a, &b).unwrap().matched_pairs, vec![(0, 0)]);
    }

    #[test]
    fn identical_disjoint_instances_give_one() {
        let a = set(&[&[(0, 0), (1, 0)], &[(3, 3)], &[(2, 2)]]);
        assert_eq!(instance_iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn empty_sets_score_zero() {
        let a = set(&[&[(0, 0)]]);
        assert_eq!(instance_iou(&a, &set(&[])).unwrap(), 0.0);
        assert_eq!(instance_iou(&set(&[]), &set(&[])).unwrap(), 0.0);
        assert_eq!(instance_iou(&a, &set(&[&[]])).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let a = set(&[&[(0, 0)]]);
        let b = MaskSet::new("m", 2, 5, 4, vec![BitMask::empty(5, 4)]).unwrap();
        assert!(mask_iou(&a, &b).is_err());
        assert!(assign_instances(&a, &b).is_err());
        assert!(instance_iou(&a, &b).is_err());
    }

    #[test]
    fn swapped_arguments_swap_coordinates() {
        let a = set(&[&[(0, 0), (0, 1)], &[(3, 3)]]);
        let b = set(&[&[(3, 3)], &[(0, 1), (0, 2)], &[(2, 2)]]);
        let ab = assign_instances(&a, &b).unwrap();
        let ba = assign_instances(&b, &a).unwrap();
        let mut swapped: Vec<_> = ba.matched_pairs.iter().map(|&(x, y)| (y, x)).collect();
        swapped.sort_unstable();
        assert_eq!(ab.matched_pairs, swapped);
        assert_eq!(ab.total_cost, ba.total_cost);
    }
}
