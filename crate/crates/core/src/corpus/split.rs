use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PromptRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    /// Fraction of each agent's prompts that go to train (the rest to test).
    pub train: f64,
    /// Fraction of each agent's train prompts used for encoder finetuning
    /// (the rest form the reward split).
    pub finetune: f64,
}

impl Default for SplitRatios {
    /// 80/20 train/test, then 75/25 finetune/reward.
    fn default() -> Self {
        Self {
            train: 0.8,
            finetune: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplits {
    pub train: Vec<PromptRecord>,
    pub test: Vec<PromptRecord>,
    pub finetune: Vec<PromptRecord>,
    pub reward: Vec<PromptRecord>,
    pub seed: u64,
}

fn integral_part(n: usize, frac: f64, agent: &str, what: &str) -> Result<usize> {
    let exact = n as f64 * frac;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-9 * (n as f64).max(1.0) {
        return Err(Error::InvalidConfig(format!(
            "agent {agent:?}: {what} size {n} × {frac} = {exact} is not integral"
        )));
    }
    Ok(rounded as usize)
}

/// Shuffles each agent's prompts with the seed and cuts them into
/// train/test and then finetune/reward, with equal per-agent counts in every
/// split.
pub fn split_dataset(prompts: &[PromptRecord], ratios: SplitRatios, seed: u64) -> Result<DatasetSplits> {
    for (name, r) in [("train", ratios.train), ("finetune", ratios.finetune)] {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::InvalidConfig(format!("{name} ratio {r} outside (0, 1)")));
        }
    }
    let mut by_agent: BTreeMap<&str, Vec<&PromptRecord>> = BTreeMap::new();
    for p in prompts {
        by_agent.entry(p.agent.as_str()).or_default().push(p);
    }
    let Some(per_agent) = by_agent.values().next().map(Vec::len) else {
        return Err(Error::InvalidInput("no prompts to split".into()));
    };
    if let Some((agent, group)) = by_agent.iter().find(|(_, g)| g.len() != per_agent) {
        return Err(Error::InvalidConfig(format!(
            "agent {agent:?} has {} prompts, others have {per_agent}; equal per-agent splits are impossible",
            group.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DatasetSplits {
        train: Vec::new(),
        test: Vec::new(),
        finetune: Vec::new(),
        reward: Vec::new(),
        seed,
    };
    for (agent, mut group) in by_agent {
        let n_train = integral_part(group.len(), ratios.train, agent, "train")?;
        let n_finetune = integral_part(n_train, ratios.finetune, agent, "finetune")?;
        if n_train == 0 || n_train == group.len() || n_finetune == 0 || n_finetune == n_train {
            return Err(Error::InvalidConfig(format!(
                "agent {agent:?}: ratios leave an empty split"
            )));
        }
        group.shuffle(&mut rng);
        let (train, test) = group.split_at(n_train);
        let (finetune, reward) = train.split_at(n_finetune);
        out.train.extend(train.iter().map(|r| (*r).clone()));
        out.test.extend(test.iter().map(|r| (*r).clone()));
        out.finetune.extend(finetune.iter().map(|r| (*r).clone()));
        out.reward.extend(reward.iter().map(|r| (*r).clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn dataset(agents: usize, each: usize) -> Vec<PromptRecord> {
        (0..agents)
            .flat_map(|a| (0..each).map(move |i| PromptRecord::new(format!("a{a}-{i}"), format!("agent{a}"), format!("prompt {i}"))))
            .collect()
    }

    #[test]
    fn single_agent_four_prompts() {
        let s = split_dataset(&dataset(1, 4), SplitRatios { train: 0.75, finetune: 2.0 / 3.0 }, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (3, 1));
        assert_eq!((s.finetune.len(), s.reward.len()), (2, 1));
    }

    #[test]
    fn rejects_non_integral_and_unequal() {
        let err = split_dataset(&dataset(2, 5), SplitRatios { train: 0.5, finetune: 0.5 }, 0).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(ref m) if m.contains("agent0")));
        let mut uneven = dataset(2, 4);
        uneven.pop();
        assert!(matches!(split_dataset(&uneven, SplitRatios { train: 0.5, finetune: 0.5 }, 0), Err(Error::InvalidConfig(_))));
        assert!(split_dataset(&dataset(1, 4), SplitRatios { train: 1.0, finetune: 0.5 }, 0).is_err());
    }

    proptest! {
        #[test]
        fn splits_partition_and_balance(agents in 1usize..6, quarter in 1usize..8, seed: u64) {
            let data = dataset(agents, quarter * 8);
            let s = split_dataset(&data, SplitRatios { train: 0.75, finetune: 0.5 }, seed).unwrap();
            prop_assert_eq!(&s, &split_dataset(&data, SplitRatios { train: 0.75, finetune: 0.5 }, seed).unwrap());
            let ids = |v: &[PromptRecord]| v.iter().map(|r| r.id.clone()).collect::<HashSet<_>>();
            let (train, test, ft, rw) = (ids(&s.train), ids(&s.test), ids(&s.finetune), ids(&s.reward));
            prop_assert!(train.is_disjoint(&test) && ft.is_disjoint(&rw));
            prop_assert_eq!(train.union(&test).count(), data.len());
            prop_assert_eq!(ft.union(&rw).cloned().collect::<HashSet<_>>(), train);
            for split in [&s.train, &s.test, &s.finetune, &s.reward] {
                let mut counts = BTreeMap::new();
                for r in split.iter() {
                    *counts.entry(r.agent.clone()).or_insert(0usize) += 1;
                }
                prop_assert_eq!(counts.len(), agents);
                prop_assert!(counts.values().all(|&c| c == *counts.values().next().unwrap()));
            }
        }
    }
}
