use serde::{Deserialize, Serialize};

use crate::encoders::Family;
use crate::error::{Error, Result};
use crate::pretraining::{LocalLoss, ObjectiveConfig};

/// Cartesian product of datasets, objectives, local losses, encoders and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub datasets: Vec<String>,
    pub objectives: Vec<ObjectiveConfig>,
    pub local_losses: Vec<LocalLoss>,
    pub encoders: Vec<Family>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub dataset: String,
    pub objective: ObjectiveConfig,
    pub encoder: Family,
    pub seed: u64,
}

impl GridCell {
    pub fn name(&self) -> String {
        format!(
            "{}_{}_{}_s{}",
            self.dataset,
            self.encoder.as_str(),
            self.objective.label().replace('+', "_"),
            self.seed
        )
    }
}

impl ExperimentGrid {
    pub fn from_toml(text: &str) -> Result<Self> {
        let g: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in &g.objectives {
            o.validate()?;
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.datasets.len() * self.objectives.len() * self.local_losses.len() * self.encoders.len() * self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::with_capacity(self.len());
        for dataset in &self.datasets {
            for encoder in &self.encoders {
                for objective in &self.objectives {
                    for &local in &self.local_losses {
                        for &seed in &self.seeds {
                            out.push(GridCell {
                                dataset: dataset.clone(),
                                objective: objective.clone().with_local(local),
                                encoder: *encoder,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: &str = r#"
datasets = ["synthetic", "cub"]
local_losses = ["none", "ac", "lc"]
encoders = ["basic"]
seeds = [0, 1]

[[objectives]]
kind = "fc"

[[objectives]]
kind = "cmdim"
match_prob = 0.5
"#;

    #[test]
    fn count_is_product_of_axes() {
        let g = ExperimentGrid::from_toml(GRID).unwrap();
        assert_eq!(g.len(), 2 * 2 * 3 * 1 * 2);
        let cells = g.cells();
        assert_eq!(cells.len(), g.len());
        let mut names: Vec<String> = cells.iter().map(GridCell::name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), g.len());
    }

    #[test]
    fn invalid_objective_is_rejected() {
        let bad = GRID.replace("0.5", "1.5");
        assert!(ExperimentGrid::from_toml(&bad).is_err());
    }
}
