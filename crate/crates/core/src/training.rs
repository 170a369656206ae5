//! Labeled feature tables and combiner fitting.

use std::io::{Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::affinity::{fit_combiner, AffinityContext, AffinityError, CombinerKind, CombinerWeights};
use crate::config::TrainingParams;
use crate::simulator::corrupt_tracklets;
use crate::tracklets::{
    consecutive_pairs, ground_truth_tracklets, sample_spatial_pairs, sample_temporal_pairs, PairSample, Tracklet,
    TrackletError,
};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("scene has no ground-truth identities")]
    MissingLabels,
    #[error("scene has no tracklets")]
    MissingTracklets,
    #[error(transparent)]
    Tracklet(#[from] TrackletError),
    #[error(transparent)]
    Affinity(#[from] AffinityError),
    #[error("pair table: {0}")]
    Table(String),
}

impl From<csv::Error> for TrainingError {
    fn from(e: csv::Error) -> Self {
        Self::Table(e.to_string())
    }
}

/// Feature rows of one combiner kind, split by label.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTable {
    pub kind: CombinerKind,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

impl PairTable {
    pub fn new(kind: CombinerKind) -> Self {
        Self {
            kind,
            positives: Vec::new(),
            negatives: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// CSV with header `kind,label,<feature names>`; positives first.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TrainingError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["kind", "label"];
        header.extend(self.kind.feature_names());
        w.write_record(&header)?;
        for (label, rows) in [("1", &self.positives), ("0", &self.negatives)] {
            for row in rows {
                let mut rec = vec![self.kind.as_str().to_string(), label.to_string()];
                rec.extend(row.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| TrainingError::Table(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, TrainingError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let kind = [CombinerKind::Temporal, CombinerKind::Spatial, CombinerKind::Split]
            .into_iter()
            .find(|k| header.len() > 2 && k.feature_names().iter().copied().eq(header.iter().skip(2)))
            .ok_or_else(|| TrainingError::Table("header matches no combiner kind".into()))?;
        let mut table = Self::new(kind);
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.get(0) != Some(kind.as_str()) {
                return Err(TrainingError::Table(format!("line {line}: kind differs from header")));
            }
            let row: Vec<f64> = rec
                .iter()
                .skip(2)
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| TrainingError::Table(format!("line {line}: {e}")))?;
            match rec.get(1) {
                Some("1") => table.positives.push(row),
                Some("0") => table.negatives.push(row),
                other => return Err(TrainingError::Table(format!("line {line}: bad label {other:?}"))),
            }
        }
        Ok(table)
    }

    pub fn fit(&self) -> Result<CombinerWeights, TrainingError> {
        Ok(fit_combiner(&self.positives, &self.negatives, self.kind)?)
    }
}

fn sample_rows(
    ctx: &AffinityContext<'_>,
    samples: &[PairSample],
    kind: CombinerKind,
) -> Result<Vec<Vec<f64>>, AffinityError> {
    samples
        .par_iter()
        .map(|s| match kind {
            CombinerKind::Temporal => ctx.temporal_features(&s.x.tracklet, &s.y.tracklet).map(|f| f.to_vec()),
            _ => ctx.spatial_features(&s.x.tracklet, &s.y.tracklet).map(|f| f.to_vec()),
        })
        .collect()
}

/// Temporal pair features from fragments of the ground-truth tracklets.
pub fn temporal_table(ctx: &AffinityContext<'_>, params: &TrainingParams) -> Result<PairTable, TrainingError> {
    let tracks = labeled_tracks(ctx)?;
    let s = sample_temporal_pairs(ctx.scene, &tracks, params.rounds, params.seed)?;
    Ok(PairTable {
        kind: CombinerKind::Temporal,
        positives: sample_rows(ctx, &s.positives, CombinerKind::Temporal)?,
        negatives: sample_rows(ctx, &s.negatives, CombinerKind::Temporal)?,
    })
}

/// Spatial pair features from fragments of the ground-truth tracklets.
pub fn spatial_table(ctx: &AffinityContext<'_>, params: &TrainingParams) -> Result<PairTable, TrainingError> {
    let tracks = labeled_tracks(ctx)?;
    let s = sample_spatial_pairs(ctx.scene, &tracks, params.rounds, params.seed)?;
    Ok(PairTable {
        kind: CombinerKind::Spatial,
        positives: sample_rows(ctx, &s.positives, CombinerKind::Spatial)?,
        negatives: sample_rows(ctx, &s.negatives, CombinerKind::Spatial)?,
    })
}

/// Split features of consecutive detections in the scene's tracklets after
/// injecting identity switches at `switch_rate`; a pair is positive when both
/// detections share an identity.
pub fn split_table(ctx: &AffinityContext<'_>, params: &TrainingParams) -> Result<PairTable, TrainingError> {
    let scene = ctx.scene;
    if scene.identities.is_none() {
        return Err(TrainingError::MissingLabels);
    }
    let tracklets: &[Tracklet] = scene.tracklets.as_deref().ok_or(TrainingError::MissingTracklets)?;
    let (corrupted, _) = corrupt_tracklets(scene, tracklets, params.switch_rate, params.seed);
    let pairs = consecutive_pairs(scene, &corrupted);
    let rows: Vec<(bool, Vec<f64>)> = pairs
        .par_iter()
        .map(|&(a, b, same)| (same, ctx.split_features(a, b).to_array().to_vec()))
        .collect();
    let mut table = PairTable::new(CombinerKind::Split);
    for (same, row) in rows {
        if same {
            table.positives.push(row);
        } else {
            table.negatives.push(row);
        }
    }
    Ok(table)
}

fn labeled_tracks(ctx: &AffinityContext<'_>) -> Result<Vec<crate::tracklets::LabeledTracklet>, TrainingError> {
    if ctx.scene.identities.is_none() {
        return Err(TrainingError::MissingLabels);
    }
    Ok(ground_truth_tracklets(ctx.scene))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedWeights {
    pub temporal: CombinerWeights,
    pub spatial: CombinerWeights,
    pub split: CombinerWeights,
}

/// Samples all three pair tables from a labeled scene and fits each combiner.
pub fn train_weights(ctx: &AffinityContext<'_>, params: &TrainingParams) -> Result<TrainedWeights, TrainingError> {
    Ok(TrainedWeights {
        temporal: temporal_table(ctx, params)?.fit()?,
        spatial: spatial_table(ctx, params)?.fit()?,
        split: split_table(ctx, params)?.fit()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::AffinityParams;
    use crate::precluster::{precluster_scene, PreclusterParams};
    use crate::simulator::{simulate_scene, SimConfig};

    #[test]
    fn table_csv_round_trip() {
        let table = PairTable {
            kind: CombinerKind::Spatial,
            positives: vec![vec![0.1, -2.0, 0.3333333333333333, 4.0, 1e-17]],
            negatives: vec![vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![0.0; 5]],
        };
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("kind,label,fw,bw,app,avg3d,pc\nspatial,1,"));
        assert_eq!(PairTable::read_csv(buf.as_slice()).unwrap(), table);
    }

    #[test]
    fn table_rejects_bad_rows() {
        let bad = "kind,label,best,min,max,mean,var\nsplit,2,1,1,1,1,1\n";
        assert!(PairTable::read_csv(bad.as_bytes()).is_err());
        let bad = "kind,label,a,b\n";
        assert!(PairTable::read_csv(bad.as_bytes()).is_err());
    }

    #[test]
    fn tables_from_simulated_scene() {
        let scene = simulate_scene(&SimConfig {
            n_frames: 80,
            ..SimConfig::default()
        })
        .unwrap();
        let clusters = precluster_scene(&scene, &PreclusterParams::default());
        let ctx = AffinityContext::new(&scene, &clusters, AffinityParams::default());
        let params = TrainingParams {
            rounds: 5,
            ..TrainingParams::default()
        };
        for table in [
            temporal_table(&ctx, &params).unwrap(),
            spatial_table(&ctx, &params).unwrap(),
            split_table(&ctx, &params).unwrap(),
        ] {
            assert!(!table.positives.is_empty() && !table.negatives.is_empty(), "{}", table.kind);
            let width = table.kind.feature_names().len();
            assert!(table.positives.iter().chain(&table.negatives).all(|r| r.len() == width));
        }
    }
}
