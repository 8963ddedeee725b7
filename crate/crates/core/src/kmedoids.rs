//! K-Medoids clustering (alternating assign / medoid-update) and
//! cluster-proportional sampling.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::Dissimilarity;

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_RESTARTS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    /// Point index of each cluster's medoid.
    pub medoids: Vec<usize>,
    /// Cluster id per point.
    pub assignment: Vec<usize>,
    /// Distance of each point to its medoid.
    pub within_distances: Vec<f64>,
    /// Objective after every assignment pass.
    pub trace: Vec<f64>,
}

impl Clustering {
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn objective(&self) -> f64 {
        self.within_distances.iter().sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_medoid(&self, point: usize) -> bool {
        self.medoids[self.assignment[point]] == point
    }
}

pub fn fit<D: Dissimilarity + ?Sized>(dist: &D, k: usize, seed: u64) -> Result<Clustering> {
    fit_with(dist, k, seed, DEFAULT_MAX_ITER, DEFAULT_RESTARTS)
}

pub fn fit_with_cap<D: Dissimilarity + ?Sized>(
    dist: &D,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<Clustering> {
    fit_with(dist, k, seed, max_iter, DEFAULT_RESTARTS)
}

/// Runs `restarts` independently seeded alternations from one RNG stream and
/// keeps the lowest objective (earliest run on ties).
pub fn fit_with<D: Dissimilarity + ?Sized>(
    dist: &D,
    k: usize,
    seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<Clustering> {
    let n = dist.len();
    if k == 0 || k > n {
        return Err(Error::InvalidClusterCount { k, n });
    }
    if restarts == 0 {
        return Err(Error::InvalidConfig("k-medoids needs at least one restart".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = most_central(dist);
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts {
        let medoids = initial_medoids(dist, k, first, &mut rng);
        let c = alternate(dist, k, medoids, max_iter);
        if best.as_ref().is_none_or(|b| c.objective() < b.objective()) {
            best = Some(c);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn alternate<D: Dissimilarity + ?Sized>(dist: &D, k: usize, mut medoids: Vec<usize>, max_iter: usize) -> Clustering {
    let n = dist.len();
    let (mut assignment, mut within) = assign(dist, &medoids);
    let mut trace = vec![within.iter().sum::<f64>()];

    for _ in 0..max_iter {
        let mut changed = false;
        for (c, medoid) in medoids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == c).collect();
            let cost = |m: usize| members.iter().map(|&j| dist.distance(m, j)).sum::<f64>();
            let mut best = *medoid;
            let mut best_cost = cost(best);
            for &cand in &members {
                if cand == *medoid {
                    continue;
                }
                let cc = cost(cand);
                if cc < best_cost {
                    best = cand;
                    best_cost = cc;
                }
            }
            if best != *medoid {
                *medoid = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let (a, w) = assign(dist, &medoids);
        assignment = a;
        within = w;
        let obj = within.iter().sum::<f64>();
        debug_assert!(
            obj <= trace[trace.len() - 1] + 1e-9,
            "k-medoids objective increased: {} -> {obj}",
            trace[trace.len() - 1]
        );
        trace.push(obj);
    }

    if swap_refine(dist, &mut medoids, &mut trace, max_iter) {
        let (a, w) = assign(dist, &medoids);
        assignment = a;
        within = w;
    }

    Clustering {
        k,
        medoids,
        assignment,
        within_distances: within,
        trace,
    }
}

fn most_central<D: Dissimilarity + ?Sized>(dist: &D) -> usize {
    let n = dist.len();
    let mut first = 0;
    let mut first_cost = f64::INFINITY;
    for i in 0..n {
        let c: f64 = (0..n).map(|j| dist.distance(i, j)).sum();
        if c < first_cost {
            first_cost = c;
            first = i;
        }
    }
    first
}

/// First medoid is `first`; the rest are drawn with probability proportional
/// to squared distance from the nearest chosen medoid.
fn initial_medoids<D: Dissimilarity + ?Sized>(dist: &D, k: usize, first: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = dist.len();
    let mut medoids = vec![first];
    let mut chosen = vec![false; n];
    chosen[first] = true;
    let mut nearest: Vec<f64> = (0..n).map(|j| dist.distance(first, j)).collect();
    while medoids.len() < k {
        let total: f64 = (0..n).filter(|&i| !chosen[i]).map(|i| nearest[i] * nearest[i]).sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for i in (0..n).filter(|&i| !chosen[i]) {
                let w = nearest[i] * nearest[i];
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            (0..n).find(|&i| !chosen[i]).expect("k <= n")
        };
        chosen[next] = true;
        medoids.push(next);
        for (j, slot) in nearest.iter_mut().enumerate() {
            let d = dist.distance(next, j);
            if d < *slot {
                *slot = d;
            }
        }
    }
    medoids
}

/// For each non-medoid in turn, applies its best improving swap at once;
/// sweeps until a full pass makes no swap. Returns whether any swap was made.
fn swap_refine<D: Dissimilarity + ?Sized>(dist: &D, medoids: &mut [usize], trace: &mut Vec<f64>, max_iter: usize) -> bool {
    let n = dist.len();
    let k = medoids.len();
    if k == n {
        return false;
    }
    let d = |a: usize, b: usize| if a == b { 0.0 } else { dist.distance(a, b) };
    // nearest slot, its distance, and the second-nearest distance
    let nearest = |medoids: &[usize]| -> Vec<(usize, f64, f64)> {
        (0..n)
            .map(|o| {
                let (mut s1, mut d1, mut d2) = (0, f64::INFINITY, f64::INFINITY);
                for (c, &m) in medoids.iter().enumerate() {
                    let x = d(o, m);
                    if x < d1 {
                        d2 = d1;
                        d1 = x;
                        s1 = c;
                    } else if x < d2 {
                        d2 = x;
                    }
                }
                (s1, d1, d2)
            })
            .collect()
    };
    let mut near = nearest(medoids);
    let mut is_medoid = vec![false; n];
    for &m in medoids.iter() {
        is_medoid[m] = true;
    }
    let mut swapped = false;
    let mut delta = vec![0.0; k];
    for _ in 0..max_iter {
        let mut changed = false;
        for x in 0..n {
            if is_medoid[x] {
                continue;
            }
            delta.iter_mut().for_each(|v| *v = 0.0);
            let mut shared = 0.0;
            for (o, &(s1, d1, d2)) in near.iter().enumerate() {
                let dox = d(o, x);
                let keep = (dox - d1).min(0.0);
                shared += keep;
                delta[s1] += dox.min(d2) - d1 - keep;
            }
            let (c, best) = delta
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (c, &v)| if v < acc.1 { (c, v) } else { acc });
            if shared + best < -1e-12 {
                is_medoid[medoids[c]] = false;
                is_medoid[x] = true;
                medoids[c] = x;
                near = nearest(medoids);
                let obj: f64 = near.iter().map(|t| t.1).sum();
                debug_assert!(obj <= trace[trace.len() - 1] + 1e-9);
                trace.push(obj);
                changed = true;
                swapped = true;
            }
        }
        if !changed {
            break;
        }
    }
    swapped
}

/// Nearest-medoid assignment, ties to the lowest cluster id. A medoid always
/// belongs to its own cluster so that no cluster can be empty.
fn assign<D: Dissimilarity + ?Sized>(dist: &D, medoids: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let n = dist.len();
    let mut assignment = vec![0; n];
    let mut within = vec![0.0; n];
    for i in 0..n {
        if let Some(c) = medoids.iter().position(|&m| m == i) {
            assignment[i] = c;
            within[i] = 0.0;
            continue;
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, &m) in medoids.iter().enumerate() {
            let d = dist.distance(i, m);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        assignment[i] = best;
        within[i] = best_d;
    }
    (assignment, within)
}

/// How members are ordered inside a cluster when drawing its quota.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DrawMode {
    /// Medoid first, then nearest to the medoid.
    Centroid,
    /// Farthest from the medoid first.
    Outlier,
    /// Uniformly shuffled.
    Random,
    /// Medoid, then the farthest member, then uniform random.
    #[default]
    Mixed,
}

/// Largest-remainder apportionment of `m` seats over cluster sizes. Equal
/// remainders go to the lower cluster id.
pub fn quotas(sizes: &[usize], m: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut q: Vec<usize> = sizes.iter().map(|&s| m * s / n).collect();
    let assigned: usize = q.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| ((m * sizes[b]) % n).cmp(&((m * sizes[a]) % n)).then(a.cmp(&b)));
    for &c in order.iter().take(m - assigned) {
        q[c] += 1;
    }
    q
}

/// Proportional draw over all clustered points.
pub fn proportional_draw(clustering: &Clustering, m: usize, mode: DrawMode, seed: u64) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..clustering.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    proportional_draw_among(clustering, &all, m, mode, &mut rng)
}

/// Proportional draw restricted to `candidates`; cluster sizes count only
/// candidate members.
pub fn proportional_draw_among<R: Rng + ?Sized>(
    clustering: &Clustering,
    candidates: &[usize],
    m: usize,
    mode: DrawMode,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if m > candidates.len() {
        return Err(Error::SampleTooLarge {
            m,
            n: candidates.len(),
        });
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); clustering.k];
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &p in &sorted {
        groups[clustering.assignment[p]].push(p);
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let q = quotas(&sizes, m);
    let mut out = Vec::with_capacity(m);
    for (c, members) in groups.iter().enumerate() {
        if q[c] == 0 {
            continue;
        }
        let ordered = order_members(clustering, c, members, mode, rng);
        out.extend(ordered.into_iter().take(q[c]));
    }
    Ok(out)
}

fn order_members<R: Rng + ?Sized>(
    clustering: &Clustering,
    cluster: usize,
    members: &[usize],
    mode: DrawMode,
    rng: &mut R,
) -> Vec<usize> {
    let w = &clustering.within_distances;
    let by_distance = |asc: bool| {
        let mut v = members.to_vec();
        v.sort_by(|&a, &b| {
            let o = w[a].total_cmp(&w[b]);
            (if asc { o } else { o.reverse() }).then(a.cmp(&b))
        });
        v
    };
    match mode {
        DrawMode::Centroid => by_distance(true),
        DrawMode::Outlier => by_distance(false),
        DrawMode::Random => {
            let mut v = members.to_vec();
            v.shuffle(rng);
            v
        }
        DrawMode::Mixed => {
            let medoid = clustering.medoids[cluster];
            let mut head = Vec::new();
            if members.contains(&medoid) {
                head.push(medoid);
            }
            if let Some(&far) = by_distance(false).iter().find(|&&p| p != medoid) {
                head.push(far);
            }
            let mut rest: Vec<usize> = members.iter().copied().filter(|p| !head.contains(p)).collect();
            rest.shuffle(rng);
            head.extend(rest);
            head
        }
    }
}
