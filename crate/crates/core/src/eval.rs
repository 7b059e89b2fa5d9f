//! Ranking evaluation: cumulated matching characteristics and mean average
//! precision. Works on ranked gallery lists only, so the same code scores
//! raw-distance baselines and learned rankings.

use std::fmt::Write as _;

use crate::embedding::RankingResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub probe_identities: Vec<u64>,
    pub gallery_identities: Vec<u64>,
    /// When set, probes without any gallery match are skipped instead of
    /// rejected.
    pub allow_unmatched: bool,
}

impl GroundTruth {
    pub fn new(probe_identities: Vec<u64>, gallery_identities: Vec<u64>) -> Self {
        Self {
            probe_identities,
            gallery_identities,
            allow_unmatched: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmcCurve {
    /// Entry `r - 1` is the accuracy at rank `r`.
    pub accuracy_at_rank: Vec<f64>,
}

impl CmcCurve {
    /// Accuracy at 1-based `rank`, saturating past the gallery size.
    pub fn at(&self, rank: usize) -> f64 {
        assert!(rank >= 1, "ranks are 1-based");
        let i = (rank - 1).min(self.accuracy_at_rank.len().saturating_sub(1));
        self.accuracy_at_rank.get(i).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.accuracy_at_rank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accuracy_at_rank.is_empty()
    }
}

fn check_inputs(op: &'static str, rankings: &[RankingResult], truth: &GroundTruth) -> Result<()> {
    if rankings.len() != truth.probe_identities.len() {
        return Err(Error::shape(
            op,
            format!(
                "{} rankings for {} probes",
                rankings.len(),
                truth.probe_identities.len()
            ),
        ));
    }
    let n_gallery = truth.gallery_identities.len();
    if let Some((p, r)) = rankings
        .iter()
        .enumerate()
        .find(|(_, r)| r.order.len() != n_gallery || r.order.iter().any(|&g| g >= n_gallery))
    {
        return Err(Error::shape(
            op,
            format!(
                "probe {p} ranks {} entries, gallery has {n_gallery}",
                r.order.len()
            ),
        ));
    }
    Ok(())
}

/// 0-based positions of the true matches in each probe's ranking. `None`
/// marks a skipped probe without matches.
fn match_positions(
    op: &'static str,
    rankings: &[RankingResult],
    truth: &GroundTruth,
) -> Result<Vec<Option<Vec<usize>>>> {
    check_inputs(op, rankings, truth)?;
    rankings
        .iter()
        .zip(&truth.probe_identities)
        .enumerate()
        .map(|(p, (r, &id))| {
            let hits: Vec<usize> = r
                .order
                .iter()
                .enumerate()
                .filter(|&(_, &g)| truth.gallery_identities[g] == id)
                .map(|(pos, _)| pos)
                .collect();
            match (hits.is_empty(), truth.allow_unmatched) {
                (false, _) => Ok(Some(hits)),
                (true, true) => Ok(None),
                (true, false) => Err(Error::domain(
                    op,
                    format!("probe {p} (identity {id}) has no match in the gallery"),
                )),
            }
        })
        .collect()
}

/// 1-based rank of the first true match for each evaluated probe.
pub fn first_match_ranks(rankings: &[RankingResult], truth: &GroundTruth) -> Result<Vec<usize>> {
    Ok(match_positions("first_match_ranks", rankings, truth)?
        .into_iter()
        .flatten()
        .map(|hits| hits[0] + 1)
        .collect())
}

pub fn cmc(rankings: &[RankingResult], truth: &GroundTruth) -> Result<CmcCurve> {
    let firsts = first_match_ranks(rankings, truth)?;
    let n_gallery = truth.gallery_identities.len();
    if firsts.is_empty() {
        return Err(Error::domain("cmc", "no probe has a gallery match"));
    }
    let mut counts = vec![0usize; n_gallery];
    for r in &firsts {
        counts[r - 1] += 1;
    }
    let total = firsts.len() as f64;
    let mut acc = 0usize;
    let accuracy_at_rank = counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / total
        })
        .collect();
    Ok(CmcCurve { accuracy_at_rank })
}

/// Average precision of one ranked list given 0-based hit positions.
pub fn average_precision(hit_positions: &[usize]) -> f64 {
    if hit_positions.is_empty() {
        return 0.0;
    }
    let sum: f64 = hit_positions
        .iter()
        .enumerate()
        .map(|(k, &pos)| (k + 1) as f64 / (pos + 1) as f64)
        .sum();
    sum / hit_positions.len() as f64
}

pub fn mean_average_precision(rankings: &[RankingResult], truth: &GroundTruth) -> Result<f64> {
    let aps: Vec<f64> = match_positions("mean_average_precision", rankings, truth)?
        .into_iter()
        .flatten()
        .map(|hits| average_precision(&hits))
        .collect();
    if aps.is_empty() {
        return Err(Error::domain(
            "mean_average_precision",
            "no probe has a gallery match",
        ));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cmc: CmcCurve,
    pub map: f64,
    pub n_probes: usize,
}

pub fn evaluate(rankings: &[RankingResult], truth: &GroundTruth) -> Result<EvalReport> {
    Ok(EvalReport {
        cmc: cmc(rankings, truth)?,
        map: mean_average_precision(rankings, truth)?,
        n_probes: first_match_ranks(rankings, truth)?.len(),
    })
}

/// Pointwise mean over trials (curves may differ in length; shorter curves
/// are extended with their final value).
pub fn mean_report(reports: &[EvalReport]) -> Option<EvalReport> {
    if reports.is_empty() {
        return None;
    }
    let len = reports.iter().map(|r| r.cmc.len()).max().unwrap_or(0);
    let k = reports.len() as f64;
    let accuracy_at_rank = (1..=len)
        .map(|rank| reports.iter().map(|r| r.cmc.at(rank)).sum::<f64>() / k)
        .collect();
    Some(EvalReport {
        cmc: CmcCurve { accuracy_at_rank },
        map: reports.iter().map(|r| r.map).sum::<f64>() / k,
        n_probes: reports.iter().map(|r| r.n_probes).sum(),
    })
}

pub const REPORT_RANKS: [usize; 4] = [1, 5, 10, 20];

/// Aligned text table, one row per named report, accuracies in percent.
pub fn format_table(rows: &[(String, EvalReport)], ranks: &[usize]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut s = String::new();
    let _ = write!(s, "{:<name_w$}", "trial");
    for r in ranks {
        let _ = write!(s, " {:>8}", format!("r={r}"));
    }
    let _ = writeln!(s, " {:>8}", "mAP");
    for (name, rep) in rows {
        let _ = write!(s, "{name:<name_w$}");
        for &r in ranks {
            let _ = write!(s, " {:>8.2}", 100.0 * rep.cmc.at(r));
        }
        let _ = writeln!(s, " {:>8.2}", 100.0 * rep.map);
    }
    s
}

/// Long-format CSV: `trial,rank,accuracy` rows followed by `trial,map,<value>`.
pub fn report_csv(rows: &[(String, EvalReport)]) -> String {
    let mut s = String::from("trial,metric,rank,value\n");
    for (name, rep) in rows {
        for (i, a) in rep.cmc.accuracy_at_rank.iter().enumerate() {
            let _ = writeln!(s, "{name},cmc,{},{a}", i + 1);
        }
        let _ = writeln!(s, "{name},map,,{}", rep.map);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ranking(order: Vec<usize>) -> RankingResult {
        let n = order.len();
        let mut scores = vec![0.0; n];
        for (pos, &g) in order.iter().enumerate() {
            scores[g] = (n - pos) as f64;
        }
        RankingResult { scores, order }
    }

    #[test]
    fn single_probe_first_rank() {
        let truth = GroundTruth::new(vec![7], vec![7, 1, 2]);
        let c = cmc(&[ranking(vec![0, 1, 2])], &truth).unwrap();
        assert_eq!(c.accuracy_at_rank, vec![1.0; 3]);
    }

    #[test]
    fn two_probes_counting() {
        let truth = GroundTruth::new(vec![1, 2], vec![1, 2, 3, 4, 5]);
        let r1 = ranking(vec![0, 1, 2, 3, 4]);
        let r2 = ranking(vec![3, 0, 1, 2, 4]);
        let c = cmc(&[r1, r2], &truth).unwrap();
        assert_eq!(c.accuracy_at_rank, vec![0.5, 0.5, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn gallery_permutation_leaves_curve_unchanged() {
        let scores = vec![0.3, 0.9, 0.1, 0.5];
        let ids = vec![10, 11, 12, 13];
        let truth = GroundTruth::new(vec![13], ids.clone());
        let base = cmc(&[RankingResult::from_scores(scores.clone())], &truth).unwrap();
        let perm = [2, 0, 3, 1];
        let s2: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
        let ids2: Vec<u64> = perm.iter().map(|&i| ids[i]).collect();
        let truth2 = GroundTruth::new(vec![13], ids2);
        let shuffled = cmc(&[RankingResult::from_scores(s2)], &truth2).unwrap();
        assert_eq!(base, shuffled);
    }

    #[test]
    fn ap_examples() {
        let truth = GroundTruth::new(vec![1], vec![1, 2, 1, 3]);
        let m = mean_average_precision(&[ranking(vec![0, 1, 2, 3])], &truth).unwrap();
        assert!((m - 5.0 / 6.0).abs() < 1e-15);

        let truth = GroundTruth::new(vec![1], vec![1, 1, 1, 2]);
        let m = mean_average_precision(&[ranking(vec![0, 1, 2, 3])], &truth).unwrap();
        assert_eq!(m, 1.0);

        let truth = GroundTruth::new(vec![1], vec![1, 2, 3, 4]);
        let m = mean_average_precision(&[ranking(vec![3, 2, 1, 0])], &truth).unwrap();
        assert_eq!(m, 0.25);
    }

    #[test]
    fn unmatched_probe() {
        let truth = GroundTruth::new(vec![1, 9], vec![1, 2]);
        let rs = [ranking(vec![0, 1]), ranking(vec![1, 0])];
        assert!(matches!(cmc(&rs, &truth), Err(Error::Domain { .. })));
        let lenient = GroundTruth {
            allow_unmatched: true,
            ..truth
        };
        let c = cmc(&rs, &lenient).unwrap();
        assert_eq!(c.accuracy_at_rank, vec![1.0, 1.0]);
        assert_eq!(evaluate(&rs, &lenient).unwrap().n_probes, 1);
    }

    #[test]
    fn shape_errors() {
        let truth = GroundTruth::new(vec![1], vec![1, 2]);
        assert!(matches!(cmc(&[], &truth), Err(Error::Shape { .. })));
        assert!(matches!(
            cmc(&[ranking(vec![0, 1, 2])], &truth),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn table_and_csv() {
        let truth = GroundTruth::new(vec![1, 2], vec![1, 2, 3]);
        let rep = evaluate(&[ranking(vec![0, 1, 2]), ranking(vec![0, 1, 2])], &truth).unwrap();
        let mean = mean_report(&[rep.clone(), rep.clone()]).unwrap();
        assert_eq!(mean.cmc, rep.cmc);
        let t = format_table(&[("a".into(), rep.clone())], &[1, 2]);
        assert!(t.contains("r=1"));
        assert!(t.lines().nth(1).unwrap().contains("50.00"));
        let c = report_csv(&[("a".into(), rep)]);
        assert!(c.starts_with("trial,metric,rank,value\na,cmc,1,0.5\n"));
        assert!(c.contains("a,map,,0.75"));
    }

    proptest! {
        #[test]
        fn metric_properties(
            n_gallery in 2usize..12, n_probes in 1usize..6, seed in any::<u64>()
        ) {
            use rand::{seq::SliceRandom, Rng, SeedableRng};
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let gallery: Vec<u64> = (0..n_gallery).map(|_| r.random_range(0..3)).collect();
            let probes: Vec<u64> = (0..n_probes).map(|_| gallery[r.random_range(0..n_gallery)]).collect();
            let truth = GroundTruth::new(probes.clone(), gallery.clone());
            let rankings: Vec<RankingResult> = (0..n_probes).map(|_| {
                let mut o: Vec<usize> = (0..n_gallery).collect();
                o.shuffle(&mut r);
                ranking(o)
            }).collect();
            let c = cmc(&rankings, &truth).unwrap();
            for w in c.accuracy_at_rank.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            prop_assert_eq!(*c.accuracy_at_rank.last().unwrap(), 1.0);
            let m = mean_average_precision(&rankings, &truth).unwrap();
            prop_assert!((0.0..=1.0).contains(&m));

            // Perfect rankings: all matches first.
            let perfect: Vec<RankingResult> = probes.iter().map(|&id| {
                let mut o: Vec<usize> = (0..n_gallery).collect();
                o.sort_by_key(|&g| (gallery[g] != id, g));
                ranking(o)
            }).collect();
            prop_assert_eq!(mean_average_precision(&perfect, &truth).unwrap(), 1.0);
            let any_imperfect = rankings.iter().zip(&probes).any(|(rk, &id)| {
                let hits = rk.order.iter().filter(|&&g| gallery[g] == id).count();
                rk.order[..hits].iter().any(|&g| gallery[g] != id)
            });
            prop_assert_eq!(m < 1.0, any_imperfect);
        }
    }
}
