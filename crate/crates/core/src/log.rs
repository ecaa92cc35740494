//! Per-epoch training records shared by every training loop.

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy_whole: Option<f64>,
    pub accuracy_parts: Vec<f64>,
}

/// Records for epochs `1..=E` (in `records`) plus the evaluation of the
/// untouched starting point (in `initial`, epoch 0).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub initial: Vec<EpochRecord>,
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// Append a record; per split, epochs must strictly increase.
    pub fn push(&mut self, record: EpochRecord) {
        if let Some(last) = self.records.iter().rev().find(|r| r.split == record.split) {
            assert!(
                record.epoch > last.epoch,
                "epoch {} after {} for split {}",
                record.epoch,
                last.epoch,
                record.split
            );
        }
        self.records.push(record);
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn last(&self, split: Split) -> Option<&EpochRecord> {
        self.split(split).last()
    }

    pub fn initial(&self, split: Split) -> Option<&EpochRecord> {
        self.initial.iter().find(|r| r.split == split)
    }
}
