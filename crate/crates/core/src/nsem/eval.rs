use std::fmt::Write as _;
use std::io;
use std::path::Path;

use super::ExperimentReport;

/// Classification metrics over the evaluated presentations.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// `confusion[pattern][neuron]`: presentations of `pattern` won by `neuron`.
    pub confusion: Vec<Vec<u32>>,
    /// Neuron assigned to each pattern by maximum matching.
    pub assignment: Vec<usize>,
    pub purity: f64,
}

/// Winner of one presentation: the most active neuron, lowest index on ties.
pub fn winner(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Pattern-to-neuron assignment maximising the matched confusion mass.
///
/// Exact dynamic programme over subsets of neurons; patterns beyond the
/// neuron count stay unassigned (`usize::MAX`).
pub fn best_assignment(confusion: &[Vec<u32>]) -> Vec<usize> {
    let n_pat = confusion.len();
    let n_neu = confusion.first().map_or(0, Vec::len);
    assert!(n_neu <= 20, "assignment over more than 20 neurons");
    let full = 1usize << n_neu;
    // best[p][mask]: max mass assigning patterns p.. using neurons not in mask
    let mut best = vec![vec![0u64; full]; n_pat + 1];
    for p in (0..n_pat).rev() {
        for mask in 0..full {
            let mut v = best[p + 1][mask];
            for j in 0..n_neu {
                if mask & 1 << j == 0 {
                    v = v.max(confusion[p][j] as u64 + best[p + 1][mask | 1 << j]);
                }
            }
            best[p][mask] = v;
        }
    }
    let mut out = Vec::with_capacity(n_pat);
    let mut mask = 0;
    for p in 0..n_pat {
        let mut choice = usize::MAX;
        if best[p][mask] != best[p + 1][mask] {
            for j in 0..n_neu {
                if mask & 1 << j == 0 && confusion[p][j] as u64 + best[p + 1][mask | 1 << j] == best[p][mask] {
                    choice = j;
                    break;
                }
            }
        }
        if choice != usize::MAX {
            mask |= 1 << choice;
        }
        out.push(choice);
    }
    // Patterns left unassigned take any free neuron so the map stays injective.
    for slot in out.iter_mut().filter(|s| **s == usize::MAX) {
        if let Some(j) = (0..n_neu).find(|j| mask & 1 << j == 0) {
            mask |= 1 << j;
            *slot = j;
        }
    }
    out
}

pub fn confusion(n_patterns: usize, n_neurons: usize, presentations: &[(usize, Vec<u32>)]) -> Vec<Vec<u32>> {
    let mut m = vec![vec![0u32; n_neurons]; n_patterns];
    for (pattern, counts) in presentations {
        m[*pattern][winner(counts)] += 1;
    }
    m
}

pub fn purity(confusion: &[Vec<u32>], assignment: &[usize]) -> f64 {
    let total: u32 = confusion.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    let hit: u32 = confusion
        .iter()
        .zip(assignment)
        .filter(|(_, &j)| j != usize::MAX)
        .map(|(row, &j)| row[j])
        .sum();
    hit as f64 / total as f64
}

/// Metrics over the presentations starting at or after the report's
/// evaluation start.
pub fn evaluate(report: &ExperimentReport) -> Metrics {
    let evaluated: Vec<(usize, Vec<u32>)> = report
        .presentations
        .iter()
        .filter(|p| p.start >= report.eval_start)
        .map(|p| (p.pattern, p.counts.clone()))
        .collect();
    let confusion = confusion(report.n_patterns, report.n_cause, &evaluated);
    let assignment = best_assignment(&confusion);
    let purity = purity(&confusion, &assignment);
    Metrics {
        confusion,
        assignment,
        purity,
    }
}

/// Fraction of non-empty `window`-tick windows with spikes from two or more
/// distinct cause neurons.
pub fn wta_violation_fraction(report: &ExperimentReport, window: u64) -> f64 {
    let mut windows: Vec<(u64, u64)> = Vec::new();
    for s in &report.spikes {
        let w = s.time / window;
        let bit = 1u64 << s.neuron.min(63);
        match windows.last_mut() {
            Some((idx, mask)) if *idx == w => *mask |= bit,
            _ => windows.push((w, bit)),
        }
    }
    if windows.is_empty() {
        return 0.0;
    }
    let bad = windows.iter().filter(|(_, m)| m.count_ones() >= 2).count();
    bad as f64 / windows.len() as f64
}

/// Spikes per homeostasis period, averaged over the cause neurons and over
/// the rate samples in `periods`.
pub fn mean_rate(report: &ExperimentReport, periods: std::ops::Range<usize>) -> f64 {
    let samples = &report.rates[periods.start.min(report.rates.len())..periods.end.min(report.rates.len())];
    let total: u32 = samples.iter().flat_map(|r| &r.counts).sum();
    let cells = samples.len() * report.n_cause;
    if cells == 0 {
        return 0.0;
    }
    total as f64 / cells as f64
}

pub fn rates_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("period_end");
    for k in 0..report.n_cause {
        write!(s, ",neuron{k}").unwrap();
    }
    s.push('\n');
    for r in &report.rates {
        write!(s, "{}", r.period_end).unwrap();
        for c in &r.counts {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn weights_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("time,kind,input,neuron,weight\n");
    for snap in &report.snapshots {
        for (i, row) in snap.input.iter().enumerate() {
            for (k, w) in row.iter().enumerate() {
                writeln!(s, "{},input,{i},{k},{w}", snap.time).unwrap();
            }
        }
        for (k, w) in snap.exc.iter().enumerate() {
            writeln!(s, "{},exc,,{k},{w}", snap.time).unwrap();
        }
        for (k, w) in snap.inh.iter().enumerate() {
            writeln!(s, "{},inh,,{k},{w}", snap.time).unwrap();
        }
    }
    s
}

pub fn confusion_csv(metrics: &Metrics) -> String {
    let n = metrics.confusion.first().map_or(0, Vec::len);
    let mut s = String::from("pattern");
    for k in 0..n {
        write!(s, ",neuron{k}").unwrap();
    }
    s.push('\n');
    for (p, row) in metrics.confusion.iter().enumerate() {
        write!(s, "{p}").unwrap();
        for c in row {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Write `rates.csv`, `weights.csv` and `confusion.csv` into `dir`.
pub fn write_csv(report: &ExperimentReport, dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("rates.csv"), rates_csv(report))?;
    std::fs::write(dir.join("weights.csv"), weights_csv(report))?;
    std::fs::write(dir.join("confusion.csv"), confusion_csv(&evaluate(report)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn winner_ties_lowest() {
        assert_eq!(winner(&[0, 0, 0]), 0);
        assert_eq!(winner(&[1, 3, 3]), 1);
    }

    #[test]
    fn diagonal_is_pure() {
        let c = vec![vec![10, 0, 0], vec![0, 10, 0], vec![0, 0, 10]];
        let a = best_assignment(&c);
        assert_eq!(a, vec![0, 1, 2]);
        assert_eq!(purity(&c, &a), 1.0);
    }

    #[test]
    fn one_neuron_wins_all() {
        let c = vec![vec![10, 0, 0], vec![10, 0, 0], vec![10, 0, 0]];
        let a = best_assignment(&c);
        assert!((purity(&c, &a) - 1.0 / 3.0).abs() < 1e-12);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn matching_beats_greedy() {
        // Greedy takes the 5 and is left with the 1; the optimum pairs the two 4s.
        let c = vec![vec![5, 4], vec![4, 1]];
        let a = best_assignment(&c);
        assert_eq!(a, vec![1, 0]);
    }

    fn brute_force(c: &[Vec<u32>]) -> u32 {
        fn go(c: &[Vec<u32>], p: usize, used: &mut Vec<bool>) -> u32 {
            if p == c.len() {
                return 0;
            }
            let mut best = go(c, p + 1, used);
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.max(c[p][j] + go(c, p + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        go(c, 0, &mut vec![false; c[0].len()])
    }

    proptest::proptest! {
        #[test]
        fn assignment_is_optimal(cells in proptest::collection::vec(0u32..50, 16)) {
            let c: Vec<Vec<u32>> = cells.chunks(4).map(<[u32]>::to_vec).collect();
            let a = best_assignment(&c);
            let mass: u32 = c.iter().zip(&a).map(|(row, &j)| row[j]).sum();
            proptest::prop_assert_eq!(mass, brute_force(&c));
        }
    }

    #[test]
    fn random_winners_near_chance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut total = 0.0;
        let trials = 200;
        for _ in 0..trials {
            let pres: Vec<(usize, Vec<u32>)> = (0..300)
                .map(|i| {
                    let mut counts = vec![0; 3];
                    counts[rng.gen_range(0..3)] = 1;
                    (i % 3, counts)
                })
                .collect();
            let c = confusion(3, 3, &pres);
            total += purity(&c, &best_assignment(&c));
        }
        let mean = total / trials as f64;
        // Matching picks the best permutation, so slightly above 1/3.
        assert!(mean > 1.0 / 3.0 && mean < 0.40, "mean purity {mean}");
    }
}
