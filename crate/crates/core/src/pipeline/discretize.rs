use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::panel::{Panel, RegimePanel};
use super::{PipelineError, Result};
use crate::dataset::DiscreteDataset;
use crate::hmm::{baum_welch_restarts, split_sections, BaumWelchConfig, DtHmm};

/// Name of the next-month price target column.
pub const FORECAST_COLUMN: &str = "forecast";

/// Sign of each first difference: 1 for a rise, 0 for a fall or no change.
pub fn to_emissions(values: &[f64]) -> Result<Vec<usize>> {
    if values.len() < 2 {
        return Err(PipelineError::InvalidArgument(format!(
            "need at least 2 values to difference, got {}",
            values.len()
        )));
    }
    Ok(values.windows(2).map(|w| usize::from(w[1] - w[0] > 0.0)).collect())
}

fn diffs(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Seed for one column's HMM: the first 8 bytes of SHA-256 over the id and the global seed.
pub fn column_seed(series_id: &str, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(series_id.as_bytes());
    h.update([0u8]);
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Relabels raw Viterbi states so that label order follows the mean price change
/// observed in each state (0 = falling, 2 = rising for three states).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeMap {
    /// `to_canonical[raw_state]` is the canonical label.
    pub to_canonical: Vec<usize>,
    /// Mean first difference per raw state; `None` when no month was assigned to it.
    pub state_means: Vec<Option<f64>>,
}

impl RegimeMap {
    pub fn identity(n_states: usize) -> Self {
        Self {
            to_canonical: (0..n_states).collect(),
            state_means: vec![None; n_states],
        }
    }

    /// States never visited are ranked as if their mean change were zero; ties go
    /// to the lower raw index.
    pub fn fit(states: &[usize], diffs: &[f64], n_states: usize) -> Self {
        let mut sum = vec![0.0; n_states];
        let mut count = vec![0usize; n_states];
        for (&s, &d) in states.iter().zip(diffs) {
            sum[s] += d;
            count[s] += 1;
        }
        let state_means: Vec<Option<f64>> = (0..n_states)
            .map(|s| (count[s] > 0).then(|| sum[s] / count[s] as f64))
            .collect();
        let mut order: Vec<usize> = (0..n_states).collect();
        order.sort_by(|&a, &b| {
            let (ma, mb) = (state_means[a].unwrap_or(0.0), state_means[b].unwrap_or(0.0));
            ma.total_cmp(&mb).then(a.cmp(&b))
        });
        let mut to_canonical = vec![0; n_states];
        for (label, &raw) in order.iter().enumerate() {
            to_canonical[raw] = label;
        }
        Self {
            to_canonical,
            state_means,
        }
    }

    pub fn apply(&self, states: &[usize]) -> Vec<usize> {
        states.iter().map(|&s| self.to_canonical[s]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscretizeSettings {
    pub n_states: usize,
    /// Baum-Welch runs exactly this many updates.
    pub bw_iters: usize,
    /// Train on this many contiguous sections instead of one sequence.
    pub chunk: Option<usize>,
    /// Keep raw Viterbi state indices instead of mean-ordered labels.
    pub raw_labels: bool,
    /// Random initializations per column; the best training fit is kept.
    pub restarts: usize,
}

impl Default for DiscretizeSettings {
    fn default() -> Self {
        Self {
            n_states: 3,
            bw_iters: 100,
            chunk: None,
            raw_labels: false,
            restarts: 1,
        }
    }
}

/// HMMs and label maps per trained column. The forecast column has no entry of
/// its own and is decoded with the price column's model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainedModels {
    pub hmms: BTreeMap<String, DtHmm>,
    pub remaps: BTreeMap<String, RegimeMap>,
}

impl TrainedModels {
    fn model_for<'a>(&'a self, id: &'a str, price_id: &'a str) -> Result<(&'a DtHmm, &'a RegimeMap)> {
        let key = if id == FORECAST_COLUMN { price_id } else { id };
        match (self.hmms.get(key), self.remaps.get(key)) {
            (Some(h), Some(r)) => Ok((h, r)),
            _ => Err(PipelineError::MissingModel(key.to_string())),
        }
    }
}

fn train_column(id: &str, values: &[f64], settings: &DiscretizeSettings, seed: u64) -> Result<(DtHmm, RegimeMap)> {
    let emissions = to_emissions(values)?;
    let sequences = match settings.chunk {
        Some(n) => split_sections(&emissions, n),
        None => vec![emissions.clone()],
    };
    let config = BaumWelchConfig {
        max_iters: settings.bw_iters,
        tolerance: None,
    };
    let (hmm, _) = baum_welch_restarts(
        settings.n_states,
        2,
        &sequences,
        settings.restarts,
        column_seed(id, seed),
        &config,
    )?;
    let states = hmm.viterbi(&emissions)?.states;
    let remap = if settings.raw_labels {
        RegimeMap::identity(settings.n_states)
    } else {
        RegimeMap::fit(&states, &diffs(values), settings.n_states)
    };
    Ok((hmm, remap))
}

fn decode(panel: &Panel, models: &TrainedModels, price_id: &str, n_states: usize) -> Result<RegimePanel> {
    let columns = panel
        .ids
        .iter()
        .zip(&panel.columns)
        .map(|(id, values)| {
            let (hmm, remap) = models.model_for(id, price_id)?;
            let states = hmm.viterbi(&to_emissions(values)?)?.states;
            Ok(remap.apply(&states))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegimePanel {
        dates: panel.dates[1..].to_vec(),
        data: DiscreteDataset::new(panel.ids.clone(), vec![n_states; panel.ids.len()], columns)?,
    })
}

/// Trains one HMM per column (except the forecast target) on `train` and decodes
/// every column into regime labels. Columns train in parallel; results are merged
/// in column order.
pub fn discretize_train(
    train: &Panel,
    price_id: &str,
    settings: &DiscretizeSettings,
    seed: u64,
) -> Result<(RegimePanel, TrainedModels)> {
    if settings.n_states == 0 {
        return Err(PipelineError::InvalidArgument("n_states must be positive".into()));
    }
    if train.index_of(price_id).is_none() {
        return Err(PipelineError::InvalidArgument(format!("no price column `{price_id}`")));
    }
    let trained: Vec<(String, DtHmm, RegimeMap)> = train
        .ids
        .par_iter()
        .zip(&train.columns)
        .filter(|(id, _)| id.as_str() != FORECAST_COLUMN)
        .map(|(id, values)| {
            let (h, r) = train_column(id, values, settings, seed)?;
            Ok((id.clone(), h, r))
        })
        .collect::<Result<_>>()?;
    let mut models = TrainedModels::default();
    for (id, h, r) in trained {
        models.hmms.insert(id.clone(), h);
        models.remaps.insert(id, r);
    }
    let panel = decode(train, &models, price_id, settings.n_states)?;
    Ok((panel, models))
}

/// Decodes `panel` with already-trained models; nothing is re-estimated.
pub fn discretize_apply(panel: &Panel, models: &TrainedModels, price_id: &str) -> Result<RegimePanel> {
    let n_states = models
        .hmms
        .values()
        .next()
        .map(DtHmm::n_states)
        .ok_or_else(|| PipelineError::MissingModel(price_id.to_string()))?;
    decode(panel, models, price_id, n_states)
}

/// File stem for a series in the model store: dots become underscores.
pub fn store_stem(series_id: &str) -> String {
    series_id.replace('.', "_")
}

/// Writes `<stem>.hmm.json` and `<stem>.remap.json` per column into `dir`.
pub fn save_models(dir: &Path, models: &TrainedModels) -> Result<()> {
    let mut stems = HashMap::new();
    for id in models.hmms.keys() {
        if let Some(prev) = stems.insert(store_stem(id), id) {
            return Err(PipelineError::InvalidArgument(format!(
                "series `{prev}` and `{id}` map to the same model file"
            )));
        }
    }
    fs::create_dir_all(dir)?;
    for (id, hmm) in &models.hmms {
        let stem = store_stem(id);
        hmm.save(dir.join(format!("{stem}.hmm.json")))?;
        let remap = models
            .remaps
            .get(id)
            .ok_or_else(|| PipelineError::MissingModel(id.clone()))?;
        fs::write(dir.join(format!("{stem}.remap.json")), serde_json::to_string_pretty(remap)? + "\n")?;
    }
    Ok(())
}

/// Loads the models of `ids` from `dir`, skipping the forecast column.
pub fn load_models<S: AsRef<str>>(dir: &Path, ids: &[S]) -> Result<TrainedModels> {
    let mut models = TrainedModels::default();
    for id in ids.iter().map(AsRef::as_ref).filter(|&id| id != FORECAST_COLUMN) {
        let stem = store_stem(id);
        let hmm_path = dir.join(format!("{stem}.hmm.json"));
        let remap_path = dir.join(format!("{stem}.remap.json"));
        if !hmm_path.exists() || !remap_path.exists() {
            return Err(PipelineError::MissingModel(id.to_string()));
        }
        let remap: RegimeMap = serde_json::from_str(&fs::read_to_string(&remap_path)?)?;
        let hmm = DtHmm::load(&hmm_path)?;
        if remap.to_canonical.len() != hmm.n_states() {
            return Err(PipelineError::InvalidRecord(format!(
                "{} does not match its model's state count",
                remap_path.display()
            )));
        }
        models.hmms.insert(id.to_string(), hmm);
        models.remaps.insert(id.to_string(), remap);
    }
    Ok(models)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emissions_are_signs() {
        assert_eq!(to_emissions(&[1.0, 2.0, 2.0, 1.0]).unwrap(), vec![1, 0, 0]);
        assert_eq!(to_emissions(&[1.0, 2.0, 3.0]).unwrap(), vec![1, 1]);
        assert_eq!(to_emissions(&[4.0; 4]).unwrap(), vec![0, 0, 0]);
        assert!(to_emissions(&[1.0]).is_err());
    }

    #[test]
    fn remap_orders_by_mean() {
        let m = RegimeMap::fit(&[0, 1, 2, 0], &[5.0, -2.0, 0.5, 3.0], 3);
        assert_eq!(m.to_canonical, vec![2, 0, 1]);
        assert_eq!(m.apply(&[0, 1, 2]), vec![2, 0, 1]);
        assert_eq!(m.state_means, vec![Some(4.0), Some(-2.0), Some(0.5)]);
    }

    #[test]
    fn unvisited_state_ranks_as_zero_mean() {
        let m = RegimeMap::fit(&[0, 0, 2], &[1.0, 1.0, -1.0], 3);
        assert_eq!(m.to_canonical, vec![2, 1, 0]);
        assert_eq!(m.state_means[1], None);
    }

    #[test]
    fn column_seeds_differ() {
        assert_ne!(column_seed("a", 1), column_seed("b", 1));
        assert_ne!(column_seed("a", 1), column_seed("a", 2));
        assert_eq!(column_seed("a", 1), column_seed("a", 1));
    }

    #[test]
    fn stem_replaces_dots() {
        assert_eq!(store_stem("STEO.PAPR_OPEC.M"), "STEO_PAPR_OPEC_M");
    }
}
