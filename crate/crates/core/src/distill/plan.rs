use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// One epoch of projector training through the student head.
    Customize,
    /// One epoch of student training.
    Distill,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Customize => "FC",
            Stage::Distill => "KD",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StagePlan {
    stages: Vec<Stage>,
}

/// `ratio` distillation epochs per customization epoch; a customization
/// epoch precedes distillation epoch `e` (1-based) iff `(e − 1) % ratio == 0`.
pub fn make_stage_plan(total_kd_epochs: usize, ratio: usize) -> Result<StagePlan> {
    if total_kd_epochs == 0 || ratio == 0 {
        return Err(Error::InvalidArgument(format!(
            "stage plan needs positive epochs and ratio, got {total_kd_epochs} and {ratio}"
        )));
    }
    let mut stages = Vec::with_capacity(total_kd_epochs + total_kd_epochs / ratio + 1);
    for e in 1..=total_kd_epochs {
        if (e - 1) % ratio == 0 {
            stages.push(Stage::Customize);
        }
        stages.push(Stage::Distill);
    }
    Ok(StagePlan { stages })
}

impl StagePlan {
    pub fn empty() -> Self {
        StagePlan { stages: Vec::new() }
    }

    /// Distillation epochs only, as used by baselines.
    pub fn distill_only(epochs: usize) -> Self {
        StagePlan {
            stages: vec![Stage::Distill; epochs],
        }
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn kd_epochs(&self) -> usize {
        self.stages.iter().filter(|s| **s == Stage::Distill).count()
    }

    pub fn tokens(&self) -> Vec<String> {
        self.stages.iter().map(Stage::to_string).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Stage::*;

    #[test]
    fn one_to_one_alternates() {
        let p = make_stage_plan(4, 1).unwrap();
        assert_eq!(
            p.stages(),
            &[Customize, Distill, Customize, Distill, Customize, Distill, Customize, Distill]
        );
    }

    #[test]
    fn ratio_five_over_ten() {
        let p = make_stage_plan(10, 5).unwrap();
        let mut kd = 0;
        let mut fc_before = Vec::new();
        for (i, s) in p.stages().iter().enumerate() {
            if *s == Distill {
                kd += 1;
                if i > 0 && p.stages()[i - 1] == Customize {
                    fc_before.push(kd);
                }
            }
        }
        assert_eq!(fc_before, vec![1, 6]);
        assert_eq!(p.kd_epochs(), 10);
    }

    #[test]
    fn long_ratio_gives_single_customization() {
        let p = make_stage_plan(3, 30).unwrap();
        assert_eq!(p.stages(), &[Customize, Distill, Distill, Distill]);
    }

    #[test]
    fn zero_arguments_fail() {
        assert!(make_stage_plan(0, 1).is_err());
        assert!(make_stage_plan(3, 0).is_err());
    }
}
