//! Capped per-task episodic memory shared by the rehearsal strategies.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodicMemory {
    /// None means unbounded (the ALL ablation setting).
    pub capacity_per_task: Option<usize>,
    pub seed: u64,
    tasks: Vec<(String, Vec<Example>)>,
}

impl EpisodicMemory {
    pub fn new(capacity_per_task: Option<usize>, seed: u64) -> Self {
        EpisodicMemory {
            capacity_per_task,
            seed,
            tasks: Vec::new(),
        }
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn total_len(&self) -> usize {
        self.tasks.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_len() == 0
    }

    pub fn examples(&self) -> impl Iterator<Item = &Example> {
        self.tasks.iter().flat_map(|(_, v)| v.iter())
    }

    /// Stores a uniform sample without replacement of
    /// min(capacity, |D_t|) examples for a task seen for the first time.
    pub fn insert(&mut self, task_label: &str, dataset: &[Example]) -> Result<()> {
        if self.tasks.iter().any(|(l, _)| l == task_label) {
            return Err(Error::DuplicateTask(task_label.to_string()));
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(self.tasks.len() as u64));
        let keep = match self.capacity_per_task {
            Some(cap) => cap.min(dataset.len()),
            None => dataset.len(),
        };
        let mut idx: Vec<usize> = (0..dataset.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(keep);
        idx.sort_unstable();
        let stored = idx.into_iter().map(|i| dataset[i].clone()).collect();
        self.tasks.push((task_label.to_string(), stored));
        Ok(())
    }

    /// Current task data plus everything in memory, seeded shuffle.
    pub fn replay_dataset(&self, current: &[Example], shuffle_seed: u64) -> Vec<Example> {
        let mut out: Vec<Example> = current.to_vec();
        out.extend(self.examples().cloned());
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        out.shuffle(&mut rng);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Setting;

    fn ex(label: &str, i: usize) -> Example {
        Example {
            x_segments: vec![format!("USER: sample {i}"), "API:".into()],
            y: format!("intent_{i}"),
            task_label: label.into(),
            setting: Setting::Intent,
            gold_api: None,
        }
    }

    fn dataset(label: &str, n: usize) -> Vec<Example> {
        (0..n).map(|i| ex(label, i)).collect()
    }

    #[test]
    fn small_task_stored_whole() {
        let mut m = EpisodicMemory::new(Some(50), 0);
        m.insert("t", &dataset("t", 30)).unwrap();
        assert_eq!(m.total_len(), 30);
    }

    #[test]
    fn thirty_seven_tasks_at_fifty_store_1850() {
        let mut m = EpisodicMemory::new(Some(50), 7);
        for t in 0..37 {
            m.insert(&format!("t{t}"), &dataset("t", 60 + t)).unwrap();
        }
        assert_eq!(m.total_len(), 1850);
    }

    #[test]
    fn same_seed_same_selection() {
        let d = dataset("t", 100);
        let mut a = EpisodicMemory::new(Some(10), 5);
        let mut b = EpisodicMemory::new(Some(10), 5);
        a.insert("t", &d).unwrap();
        b.insert("t", &d).unwrap();
        let av: Vec<_> = a.examples().collect();
        let bv: Vec<_> = b.examples().collect();
        assert_eq!(av, bv);
    }

    #[test]
    fn duplicate_task_rejected() {
        let mut m = EpisodicMemory::new(Some(10), 0);
        m.insert("t", &dataset("t", 5)).unwrap();
        assert!(matches!(
            m.insert("t", &dataset("t", 5)),
            Err(Error::DuplicateTask(_))
        ));
    }

    #[test]
    fn replay_with_empty_memory_is_current_task() {
        let m = EpisodicMemory::new(Some(50), 0);
        let d = dataset("t1", 8);
        let combined = m.replay_dataset(&d, 3);
        assert_eq!(combined.len(), 8);
        let mut sorted = combined.clone();
        sorted.sort_by_key(|e| e.y.clone());
        let mut orig = d.clone();
        orig.sort_by_key(|e| e.y.clone());
        assert_eq!(sorted, orig);
    }

    #[test]
    fn replay_size_after_three_tasks() {
        let mut m = EpisodicMemory::new(Some(50), 0);
        for t in 0..3 {
            let label = format!("t{t}");
            m.insert(&label, &dataset(&label, 80)).unwrap();
        }
        let d4 = dataset("t4", 70);
        let combined = m.replay_dataset(&d4, 0);
        assert_eq!(combined.len(), 70 + 150);
        // every memory example appears exactly once
        for stored in m.examples() {
            assert_eq!(combined.iter().filter(|e| *e == stored).count(), 1);
        }
    }
}
