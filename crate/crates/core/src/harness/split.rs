//! Train/test splits for the three validation protocols.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::ManifestEntry;
use crate::error::{Error, Result};

/// Indices into the entry list; both sides sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Protocol {
    KFold { k: usize },
    LeaveImageOut { holdout: usize },
    LeaveMethodOut { holdout: usize },
}

impl Protocol {
    pub fn splits(&self, entries: &[ManifestEntry], seed: u64) -> Result<Vec<Split>> {
        match *self {
            Protocol::KFold { k } => kfold_split(entries.len(), k, seed),
            Protocol::LeaveImageOut { holdout } => leave_image_out_split(entries, holdout, seed),
            Protocol::LeaveMethodOut { holdout } => leave_method_out_split(entries, holdout, seed),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::KFold { k } => write!(f, "{k}fold"),
            Protocol::LeaveImageOut { holdout } => write!(f, "leave-image-out ({holdout} per split)"),
            Protocol::LeaveMethodOut { holdout } => write!(f, "leave-method-out ({holdout} per split)"),
        }
    }
}

/// Accepts `5fold` (any k), `leave-image-out` and `leave-method-out`, the
/// latter two with their default holdouts of 6 and 2.
impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leave-image-out" => Ok(Protocol::LeaveImageOut { holdout: 6 }),
            "leave-method-out" => Ok(Protocol::LeaveMethodOut { holdout: 2 }),
            _ => s
                .strip_suffix("fold")
                .and_then(|k| k.parse().ok())
                .map(|k| Protocol::KFold { k })
                .ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "unknown protocol {s:?}; use e.g. 5fold, leave-image-out or leave-method-out"
                    ))
                }),
        }
    }
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let mut in_test = vec![false; n];
    test.iter().for_each(|&i| in_test[i] = true);
    (0..n).filter(|&i| !in_test[i]).collect()
}

/// Random partition of `0..n` into `k` folds whose sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Split>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k = {k}; need at least 2 folds")));
    }
    if k > n {
        return Err(Error::InsufficientData(format!("{k} folds for {n} entries")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..k)
        .map(|f| {
            let mut test = order[f * n / k..(f + 1) * n / k].to_vec();
            test.sort_unstable();
            Split {
                train: complement(n, &test),
                test,
            }
        })
        .collect())
}

/// Shuffles the distinct labels and holds out `holdout` of them per split;
/// the last group keeps any remainder.
pub fn group_split(labels: &[&str], holdout: usize, seed: u64) -> Result<Vec<Split>> {
    let mut distinct: Vec<&str> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if holdout == 0 {
        return Err(Error::InvalidParameter("holdout must be at least 1".into()));
    }
    if holdout >= distinct.len() {
        return Err(Error::InsufficientData(format!(
            "holding out {holdout} of {} groups leaves nothing to train on",
            distinct.len()
        )));
    }
    distinct.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(distinct
        .chunks(holdout)
        .map(|group| {
            let test: Vec<usize> = (0..labels.len()).filter(|&i| group.contains(&labels[i])).collect();
            Split {
                train: complement(labels.len(), &test),
                test,
            }
        })
        .collect())
}

pub fn leave_image_out_split(entries: &[ManifestEntry], holdout: usize, seed: u64) -> Result<Vec<Split>> {
    let labels: Vec<&str> = entries.iter().map(|e| e.ref_id.as_str()).collect();
    group_split(&labels, holdout, seed)
}

pub fn leave_method_out_split(entries: &[ManifestEntry], holdout: usize, seed: u64) -> Result<Vec<Split>> {
    let labels: Vec<&str> = entries.iter().map(|e| e.method.as_str()).collect();
    group_split(&labels, holdout, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entries(refs: usize, methods: usize) -> Vec<ManifestEntry> {
        (0..refs)
            .flat_map(|r| {
                (0..methods).map(move |m| ManifestEntry {
                    image_path: format!("{r}_{m}.png").into(),
                    ref_id: format!("ref{r}"),
                    method: format!("m{m}"),
                    s: 2,
                    sigma: 0.8,
                    score: 5.0,
                })
            })
            .collect()
    }

    fn assert_partition(splits: &[Split], n: usize) {
        let mut seen = vec![0; n];
        for s in splits {
            assert_eq!(s.train.len() + s.test.len(), n);
            assert!(s.test.iter().all(|t| s.train.binary_search(t).is_err()));
            s.test.iter().for_each(|&t| seen[t] += 1);
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn kfold_sizes() {
        let s = kfold_split(10, 5, 1).unwrap();
        assert!(s.iter().all(|f| f.test.len() == 2));
        assert_partition(&s, 10);
        assert_eq!(s, kfold_split(10, 5, 1).unwrap());
        assert_ne!(s, kfold_split(10, 5, 2).unwrap());
        let big = kfold_split(1620, 5, 0).unwrap();
        assert!(big.iter().all(|f| f.test.len() == 324));
        assert!(kfold_split(4, 5, 0).is_err());
        assert!(kfold_split(4, 1, 0).is_err());
    }

    #[test]
    fn leave_image_out() {
        let e = entries(30, 3);
        let s = leave_image_out_split(&e, 6, 4).unwrap();
        assert_eq!(s.len(), 5);
        assert_partition(&s, e.len());
        for split in &s {
            let test: BTreeSet<_> = split.test.iter().map(|&i| &e[i].ref_id).collect();
            assert_eq!(test.len(), 6);
            assert!(split.train.iter().all(|&i| !test.contains(&e[i].ref_id)));
        }
        assert_eq!(leave_image_out_split(&entries(12, 2), 6, 0).unwrap().len(), 2);
        assert!(leave_image_out_split(&entries(6, 2), 6, 0).is_err());
    }

    #[test]
    fn leave_method_out_remainder() {
        let e = entries(3, 9);
        let s = leave_method_out_split(&e, 2, 8).unwrap();
        let sizes: Vec<usize> = s
            .iter()
            .map(|sp| sp.test.iter().map(|&i| &e[i].method).collect::<BTreeSet<_>>().len())
            .collect();
        assert_eq!(sizes, vec![2, 2, 2, 2, 1]);
        assert_partition(&s, e.len());
        assert_eq!(leave_method_out_split(&entries(2, 4), 2, 0).unwrap().len(), 2);
    }

    #[test]
    fn protocol_names() {
        assert_eq!("5fold".parse::<Protocol>().unwrap(), Protocol::KFold { k: 5 });
        assert_eq!("leave-image-out".parse::<Protocol>().unwrap(), Protocol::LeaveImageOut { holdout: 6 });
        assert!("loo".parse::<Protocol>().is_err());
        assert_eq!(Protocol::KFold { k: 5 }.to_string(), "5fold");
    }

    proptest! {
        #[test]
        fn kfold_always_partitions(n in 2usize..200, k in 2usize..12, seed: u64) {
            prop_assume!(k <= n);
            let s = kfold_split(n, k, seed).unwrap();
            assert_partition(&s, n);
            let (lo, hi) = s.iter().fold((n, 0), |(lo, hi), f| (lo.min(f.test.len()), hi.max(f.test.len())));
            prop_assert!(hi - lo <= 1);
        }
    }
}
