//! Cross-seed stability metrics: relative entropy and Jaccard distance
//! between interpretations, prediction buckets and accuracy statistics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::interpret::{
    attention_interpretation, gradient_saliency, lime_explain, top_fraction_indices,
    InterpretationDistribution, LimeConfig, Method,
};
use crate::{EncodedSample, Error, Model, Result, SeededRng};

/// Floor applied to `q_i` wherever `p_i > 0`.
pub const KL_FLOOR: f64 = 1e-12;
pub const BUCKETS: usize = 10;

/// `sum_i p_i ln(p_i / max(q_i, 1e-12))`, skipping terms with `p_i = 0`.
pub fn relative_entropy(
    p: &InterpretationDistribution,
    q: &InterpretationDistribution,
) -> Result<f64> {
    relative_entropy_raw(p.probabilities(), q.probabilities())
}

fn relative_entropy_raw(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let h: f64 = p
        .iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * libm::log(pi / qi.max(KL_FLOOR)))
        .sum();
    // rounding can leave -1e-17 for identical inputs
    Ok(h.max(0.0))
}

/// `(1 - |A ∩ B| / |A ∪ B|) * 100`. Duplicates within a slice are ignored.
pub fn jaccard_distance<T: Ord>(a: &[T], b: &[T]) -> Result<f64> {
    let a: BTreeSet<&T> = a.iter().collect();
    let b: BTreeSet<&T> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return Err(Error::Empty("jaccard sets"));
    }
    let inter = a.intersection(&b).count();
    Ok((1.0 - inter as f64 / union as f64) * 100.0)
}

/// How per-instance entropy is aggregated across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EntropyAggregation {
    /// Mean of KL over all ordered pairs of distinct models.
    #[default]
    PairwiseMean,
    /// Mean over models of KL from each model to the mean distribution.
    KlToMean,
}

impl EntropyAggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            EntropyAggregation::PairwiseMean => "pairwise_mean",
            EntropyAggregation::KlToMean => "kl_to_mean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pairwise_mean" => Some(EntropyAggregation::PairwiseMean),
            "kl_to_mean" => Some(EntropyAggregation::KlToMean),
            _ => None,
        }
    }
}

/// Mean relative entropy over all ordered pairs `(i, j)`, `i != j`.
pub fn pairwise_entropy(dists: &[InterpretationDistribution]) -> Result<f64> {
    if dists.len() < 2 {
        return Err(Error::InvalidArgument(
            "pairwise entropy needs at least two distributions".into(),
        ));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, p) in dists.iter().enumerate() {
        for (j, q) in dists.iter().enumerate() {
            if i != j {
                total += relative_entropy(p, q)?;
                pairs += 1;
            }
        }
    }
    Ok(total / pairs as f64)
}

/// Mean over `dists` of `KL(p_i || mean)`.
pub fn entropy_to_mean(dists: &[InterpretationDistribution]) -> Result<f64> {
    if dists.len() < 2 {
        return Err(Error::InvalidArgument(
            "entropy to mean needs at least two distributions".into(),
        ));
    }
    let d = dists[0].len();
    let mut mean = vec![0.0; d];
    for p in dists {
        if p.len() != d {
            return Err(Error::LengthMismatch {
                left: d,
                right: p.len(),
            });
        }
        mean.iter_mut()
            .zip(p.probabilities())
            .for_each(|(m, v)| *m += v);
    }
    let n = dists.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let mut total = 0.0;
    for p in dists {
        total += relative_entropy_raw(p.probabilities(), &mean)?;
    }
    Ok(total / n)
}

/// Mean Jaccard distance over all ordered pairs of distinct sets.
pub fn pairwise_jaccard(sets: &[Vec<usize>]) -> Result<f64> {
    if sets.len() < 2 {
        return Err(Error::InvalidArgument(
            "pairwise jaccard needs at least two sets".into(),
        ));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, a) in sets.iter().enumerate() {
        for (j, b) in sets.iter().enumerate() {
            if i != j {
                total += jaccard_distance(a, b)?;
                pairs += 1;
            }
        }
    }
    Ok(total / pairs as f64)
}

/// `floor(p * 10)`, with 1.0 in bucket 9.
pub fn bucket_of(prediction: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&prediction) {
        return Err(Error::InvalidArgument(format!(
            "prediction {prediction} outside [0, 1]"
        )));
    }
    Ok((libm::floor(prediction * BUCKETS as f64) as usize).min(BUCKETS - 1))
}

/// Arithmetic mean and population standard deviation.
pub fn accuracy_stats(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("accuracy list"));
    }
    Ok(mean_and_std(values))
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BucketStats {
    pub bucket_index: usize,
    pub mean_pairwise_entropy: f64,
    pub mean_jaccard_percent: f64,
    /// Mean over the bucket's instances of the across-seed population std
    /// of the bucketing prediction.
    pub prediction_std: f64,
    pub count: usize,
}

/// Buckets for one interpretation method.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MethodBuckets {
    pub method: Method,
    /// Always [`BUCKETS`] entries, in bucket order.
    pub buckets: Vec<BucketStats>,
    /// Instances left out because fewer than two models produced a usable
    /// interpretation.
    pub skipped_instances: usize,
}

/// Buckets restricted to instances with one gold label.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabelBreakdown {
    pub label: usize,
    pub methods: Vec<MethodBuckets>,
}

/// Everything one test instance contributes to a report.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceObservation {
    pub sample_id: String,
    pub label: usize,
    /// Class probabilities, one vector per model.
    pub predictions: Vec<Vec<f64>>,
    /// Per method, one entry per model; `None` where the method produced no
    /// distribution (degenerate gradient or LIME fit).
    pub interpretations: BTreeMap<Method, Vec<Option<InterpretationDistribution>>>,
}

impl InstanceObservation {
    /// The value that picks the bucket: the positive-class probability for
    /// binary tasks, otherwise the gold-label probability; averaged over
    /// models. Also returns its across-model population std.
    pub fn bucket_prediction(&self) -> Result<(f64, f64)> {
        if self.predictions.is_empty() {
            return Err(Error::Empty("per-model predictions"));
        }
        let classes = self.predictions[0].len();
        let class = if classes == 2 { 1 } else { self.label };
        let values: Vec<f64> = self
            .predictions
            .iter()
            .map(|p| {
                p.get(class).copied().ok_or(Error::InvalidLabel {
                    label: class,
                    num_classes: p.len(),
                })
            })
            .collect::<Result<_>>()?;
        let (mean, std) = mean_and_std(&values);
        Ok((mean.clamp(0.0, 1.0), std))
    }
}

/// The bucket tables of a report, without run metadata.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StabilityTables {
    pub methods: Vec<MethodBuckets>,
    /// Filled only for tasks with more than two classes.
    pub per_label: Vec<LabelBreakdown>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub top_fraction: f64,
    pub aggregation: EntropyAggregation,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            top_fraction: 0.2,
            aggregation: EntropyAggregation::PairwiseMean,
        }
    }
}

#[derive(Default, Clone)]
struct Accum {
    entropy: f64,
    jaccard: f64,
    std: f64,
    count: usize,
}

/// Aggregates observations into per-method bucket tables. Instances are
/// reduced in input order, so the result does not depend on how the
/// observations were computed.
pub fn aggregate_observations(
    observations: &[InstanceObservation],
    methods: &[Method],
    options: &ReportOptions,
) -> Result<StabilityTables> {
    if observations.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let multiclass = observations[0].predictions.first().map_or(0, Vec::len) > 2;
    let mut labels: BTreeSet<usize> = BTreeSet::new();
    if multiclass {
        labels.extend(observations.iter().map(|o| o.label));
    }

    let mut methods_out = Vec::with_capacity(methods.len());
    let mut per_label: BTreeMap<usize, Vec<MethodBuckets>> = BTreeMap::new();
    for &method in methods {
        let mut all = vec![Accum::default(); BUCKETS];
        let mut by_label: BTreeMap<usize, Vec<Accum>> = labels
            .iter()
            .map(|&l| (l, vec![Accum::default(); BUCKETS]))
            .collect();
        let mut skipped = 0usize;
        let mut skipped_by_label: BTreeMap<usize, usize> = BTreeMap::new();
        for obs in observations {
            let Some(contribution) = instance_contribution(obs, method, options)? else {
                skipped += 1;
                *skipped_by_label.entry(obs.label).or_default() += 1;
                continue;
            };
            let (bucket, entropy, jaccard, std) = contribution;
            add(&mut all[bucket], entropy, jaccard, std);
            if let Some(acc) = by_label.get_mut(&obs.label) {
                add(&mut acc[bucket], entropy, jaccard, std);
            }
        }
        methods_out.push(finish(method, &all, skipped));
        for (label, acc) in &by_label {
            let skipped = skipped_by_label.get(label).copied().unwrap_or(0);
            per_label
                .entry(*label)
                .or_default()
                .push(finish(method, acc, skipped));
        }
    }
    Ok(StabilityTables {
        methods: methods_out,
        per_label: per_label
            .into_iter()
            .map(|(label, methods)| LabelBreakdown { label, methods })
            .collect(),
    })
}

fn add(acc: &mut Accum, entropy: f64, jaccard: f64, std: f64) {
    acc.entropy += entropy;
    acc.jaccard += jaccard;
    acc.std += std;
    acc.count += 1;
}

fn finish(method: Method, acc: &[Accum], skipped: usize) -> MethodBuckets {
    let buckets = acc
        .iter()
        .enumerate()
        .map(|(bucket_index, a)| {
            let n = a.count.max(1) as f64;
            BucketStats {
                bucket_index,
                mean_pairwise_entropy: a.entropy / n,
                mean_jaccard_percent: a.jaccard / n,
                prediction_std: a.std / n,
                count: a.count,
            }
        })
        .collect();
    MethodBuckets {
        method,
        buckets,
        skipped_instances: skipped,
    }
}

/// `(bucket, entropy, jaccard, prediction std)` for one instance, or `None`
/// when fewer than two models have a distribution for `method`.
fn instance_contribution(
    obs: &InstanceObservation,
    method: Method,
    options: &ReportOptions,
) -> Result<Option<(usize, f64, f64, f64)>> {
    let dists: Vec<InterpretationDistribution> = obs
        .interpretations
        .get(&method)
        .map(|v| v.iter().flatten().cloned().collect())
        .unwrap_or_default();
    if dists.len() < 2 {
        return Ok(None);
    }
    let entropy = match options.aggregation {
        EntropyAggregation::PairwiseMean => pairwise_entropy(&dists)?,
        EntropyAggregation::KlToMean => entropy_to_mean(&dists)?,
    };
    let sets: Vec<Vec<usize>> = dists
        .iter()
        .map(|d| top_fraction_indices(d, options.top_fraction))
        .collect::<Result<_>>()?;
    let jaccard = pairwise_jaccard(&sets)?;
    let (prediction, std) = obs.bucket_prediction()?;
    Ok(Some((bucket_of(prediction)?, entropy, jaccard, std)))
}

/// Settings for extracting interpretations from trained models.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObservationConfig {
    pub lime: LimeConfig,
    /// Root of the LIME perturbation streams; model `m` on test instance
    /// `s` draws from `SeededRng::new(lime_seed).derive((m << 32) | s)`.
    pub lime_seed: u64,
}

/// Runs every model on every test instance and extracts the requested
/// interpretations. Models must share their configuration.
pub fn collect_observations(
    models: &[Model],
    test: &[EncodedSample],
    methods: &[Method],
    config: &ObservationConfig,
) -> Result<Vec<InstanceObservation>> {
    check_models(models)?;
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let rng_root = SeededRng::new(config.lime_seed);
    test.iter()
        .enumerate()
        .map(|(s, sample)| {
            let mut predictions = Vec::with_capacity(models.len());
            for model in models {
                predictions.push(model.forward(&sample.ids)?.class_probabilities);
            }
            let mut interpretations = BTreeMap::new();
            for &method in methods {
                let mut per_model = Vec::with_capacity(models.len());
                for (m, model) in models.iter().enumerate() {
                    let dist = match method {
                        Method::Attention => Some(attention_interpretation(model, &sample.ids)?),
                        Method::Gradient => match gradient_saliency(model, &sample.ids) {
                            Ok(d) => Some(d),
                            Err(Error::DegenerateGradient) => None,
                            Err(e) => return Err(e),
                        },
                        Method::Lime => {
                            let mut rng = rng_root.derive(((m as u64) << 32) | s as u64);
                            match lime_explain(model, &sample.ids, &config.lime, &mut rng) {
                                Ok(e) => Some(e.distribution),
                                Err(Error::DegenerateExplanation | Error::Singular) => None,
                                Err(e) => return Err(e),
                            }
                        }
                    };
                    per_model.push(dist);
                }
                interpretations.insert(method, per_model);
            }
            Ok(InstanceObservation {
                sample_id: sample.id.clone(),
                label: sample.label,
                predictions,
                interpretations,
            })
        })
        .collect()
}

fn check_models(models: &[Model]) -> Result<()> {
    if models.len() < 2 {
        return Err(Error::InvalidArgument(
            "a stability report needs at least two models".into(),
        ));
    }
    let first = models[0].config();
    if let Some(other) = models.iter().map(Model::config).find(|c| *c != first) {
        return Err(Error::ConfigMismatch(format!(
            "model configs differ: {first:?} vs {other:?}"
        )));
    }
    Ok(())
}

/// Builds the bucket tables for `models` on `test`.
pub fn build_stability_report(
    models: &[Model],
    test: &[EncodedSample],
    methods: &[Method],
    observation: &ObservationConfig,
    options: &ReportOptions,
) -> Result<StabilityTables> {
    let observations = collect_observations(models, test, methods, observation)?;
    aggregate_observations(&observations, methods, options)
}

/// Run-level facts that make a report self-describing.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReportMetadata {
    pub artifact_version: String,
    pub prng: String,
    pub config_hash: String,
    /// Hash of the configuration minus averaging mode and seed list; equal
    /// across reports that may be compared side by side.
    pub comparison_hash: String,
    pub dataset_fingerprint: String,
    pub seeds: Vec<u64>,
    pub top_fraction: f64,
    pub entropy_aggregation: EntropyAggregation,
    pub entropy_units: String,
    pub kl_floor: f64,
    pub std_formula: String,
    pub bucket_assignment: String,
    pub early_stopping_metric: String,
    pub notes: Vec<String>,
}

impl ReportMetadata {
    /// Metadata with the fixed conventions filled in.
    pub fn new(
        config_hash: String,
        comparison_hash: String,
        dataset_fingerprint: String,
        seeds: Vec<u64>,
        options: &ReportOptions,
    ) -> Self {
        Self {
            artifact_version: crate::ARTIFACT_VERSION.into(),
            prng: crate::rng::PRNG_IDENTITY.into(),
            config_hash,
            comparison_hash,
            dataset_fingerprint,
            seeds,
            top_fraction: options.top_fraction,
            entropy_aggregation: options.aggregation,
            entropy_units: "nats".into(),
            kl_floor: KL_FLOOR,
            std_formula: "population".into(),
            bucket_assignment:
                "mean across seeds of the positive-class (binary) or gold-label probability".into(),
            early_stopping_metric: "validation accuracy".into(),
            notes: vec![
                "LIME entropies compare surrogate-coefficient magnitudes and are secondary to attention and gradient".into(),
            ],
        }
    }
}

/// A seed that produced no model.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FailedSeed {
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StabilityReport {
    pub metadata: ReportMetadata,
    /// Test accuracy per successful seed, in `metadata.seeds` order.
    pub accuracies: Vec<SeedAccuracy>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub failed_seeds: Vec<FailedSeed>,
    pub tables: StabilityTables,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SeedAccuracy {
    pub seed: u64,
    pub accuracy: f64,
}

impl StabilityReport {
    pub fn new(
        metadata: ReportMetadata,
        accuracies: Vec<SeedAccuracy>,
        failed_seeds: Vec<FailedSeed>,
        tables: StabilityTables,
    ) -> Result<Self> {
        let values: Vec<f64> = accuracies.iter().map(|a| a.accuracy).collect();
        let (accuracy_mean, accuracy_std) = accuracy_stats(&values)?;
        Ok(Self {
            metadata,
            accuracies,
            accuracy_mean,
            accuracy_std,
            failed_seeds,
            tables,
        })
    }

    pub fn method(&self, method: Method) -> Option<&MethodBuckets> {
        self.tables.methods.iter().find(|m| m.method == method)
    }
}
