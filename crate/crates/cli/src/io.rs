//! File formats: the raw record CSV, the summary JSON, and the attribute
//! space specification.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use suremap::summary::{auc_group_variance, mann_whitney_auc};
use suremap::{Attribute, AttributeSpace, RecordBatch, TaskSummary};

use crate::error::{CliError, CliResult};

pub const DEFAULT_TASK_ID: &str = "0";

/// Task ids paired with their summaries, in file order.
pub type NamedSummaries = Vec<(String, TaskSummary)>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributeJson {
    pub name: String,
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskJson {
    pub id: String,
    pub y: Vec<f64>,
    pub n: Vec<u64>,
    /// Per-group variance of `y` for statistics (such as AUC) whose
    /// uncertainty is not `sigma2 / n`; zero marks missing groups.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub var: Option<Vec<f64>>,
}

/// The summary JSON schema: attribute space, per-task statistics in
/// row-major group order, and the shared noise variance. The optional
/// `truth` block is written by the simulator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryFile {
    pub attributes: Vec<AttributeJson>,
    pub tasks: Vec<TaskJson>,
    pub sigma2: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub truth: Option<Vec<Vec<f64>>>,
}

impl SummaryFile {
    pub fn space(&self) -> CliResult<Arc<AttributeSpace>> {
        let attrs = self
            .attributes
            .iter()
            .map(|a| Attribute::new(a.name.clone(), a.levels.clone()))
            .collect();
        Ok(Arc::new(AttributeSpace::new(attrs)?))
    }

    pub fn to_summaries(&self) -> CliResult<(Arc<AttributeSpace>, NamedSummaries)> {
        let space = self.space()?;
        let d = space.group_count();
        let mut out = Vec::with_capacity(self.tasks.len());
        for task in &self.tasks {
            if task.y.len() != d || task.n.len() != d {
                return Err(CliError::data(format!(
                    "task `{}`: expected {} groups, got y={} n={}",
                    task.id,
                    d,
                    task.y.len(),
                    task.n.len()
                )));
            }
            let mut summary = TaskSummary::new(
                space.clone(),
                DVector::from_row_slice(&task.y),
                task.n.clone(),
                self.sigma2,
            );
            if let Some(var) = &task.var {
                if var.len() != d {
                    return Err(CliError::data(format!(
                        "task `{}`: variance vector has length {}, expected {}",
                        task.id,
                        var.len(),
                        d
                    )));
                }
                for (g, &v) in var.iter().enumerate() {
                    if task.n[g] > 0 && v <= 0.0 {
                        return Err(CliError::data(format!(
                            "task `{}`: group {} has {} observations but variance {v}",
                            task.id,
                            g + 1,
                            task.n[g]
                        )));
                    }
                }
                summary.variance_override = Some(DVector::from_row_slice(var));
            }
            out.push((task.id.clone(), summary));
        }
        if out.is_empty() {
            return Err(CliError::data("summary file contains no tasks"));
        }
        Ok((space, out))
    }

    pub fn from_summaries(
        space: &AttributeSpace,
        tasks: &[(String, TaskSummary)],
        sigma2: f64,
    ) -> Self {
        SummaryFile {
            attributes: space
                .attributes()
                .iter()
                .map(|a| AttributeJson {
                    name: a.name.clone(),
                    levels: a.levels.clone(),
                })
                .collect(),
            tasks: tasks
                .iter()
                .map(|(id, s)| TaskJson {
                    id: id.clone(),
                    y: s.y.iter().cloned().collect(),
                    n: s.n.clone(),
                    var: s
                        .variance_override
                        .as_ref()
                        .map(|v| v.iter().cloned().collect()),
                })
                .collect(),
            sigma2,
            truth: None,
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Parse an inline space spec of the form `sex=F|M;age=<25|25-64|>64`.
pub fn parse_attrs_spec(spec: &str) -> CliResult<AttributeSpace> {
    let mut attrs = Vec::new();
    for part in spec.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (name, levels) = part.split_once('=').ok_or_else(|| {
            CliError::usage(format!(
                "attribute spec `{part}` must look like name=level1|level2"
            ))
        })?;
        let levels: Vec<String> = levels.split('|').map(|l| l.trim().to_string()).collect();
        if levels.is_empty() || levels.iter().any(|l| l.is_empty()) {
            return Err(CliError::usage(format!(
                "attribute `{name}` has an empty level label"
            )));
        }
        attrs.push(Attribute::new(name.trim(), levels));
    }
    if attrs.is_empty() {
        return Err(CliError::usage("attribute spec is empty"));
    }
    Ok(AttributeSpace::new(attrs)?)
}

/// Load a space from a JSON file shaped like `{"attributes": [...]}`.
pub fn load_space_file(path: &Path) -> CliResult<AttributeSpace> {
    #[derive(Deserialize)]
    struct SpaceFile {
        attributes: Vec<AttributeJson>,
    }
    let text = fs::read_to_string(path)?;
    let file: SpaceFile = serde_json::from_str(&text)?;
    let attrs = file
        .attributes
        .into_iter()
        .map(|a| Attribute::new(a.name, a.levels))
        .collect();
    Ok(AttributeSpace::new(attrs)?)
}

/// One parsed CSV row: task id, 0-based group offset, and the payload
/// (a metric value, or a label/score pair in AUC mode).
#[derive(Debug, Clone)]
pub struct RawRow {
    pub task: String,
    pub group: usize,
    pub value: f64,
    pub label: Option<bool>,
}

/// The raw dataset: the attribute space plus all rows, in file order.
#[derive(Debug, Clone)]
pub struct RawData {
    pub space: Arc<AttributeSpace>,
    pub rows: Vec<RawRow>,
    pub task_ids: Vec<String>,
    pub auc: bool,
}

impl RawData {
    pub fn is_multi_task(&self) -> bool {
        self.task_ids.len() > 1
    }

    /// Rows of each task, in task-id order.
    pub fn rows_by_task(&self) -> Vec<Vec<&RawRow>> {
        let index: BTreeMap<&str, usize> = self
            .task_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut out = vec![Vec::new(); self.task_ids.len()];
        for row in &self.rows {
            out[index[row.task.as_str()]].push(row);
        }
        out
    }
}

const VALUE_COLUMN: &str = "value";
const TASK_COLUMN: &str = "task";
const LABEL_COLUMN: &str = "label";
const SCORE_COLUMN: &str = "score";

/// Read the raw CSV. When `space` is `None`, the attribute space is
/// inferred from the data: every column other than the reserved ones is an
/// attribute, with levels sorted lexicographically.
pub fn read_raw_csv(path: &Path, space: Option<AttributeSpace>, auc: bool) -> CliResult<RawData> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let reserved: &[&str] = if auc {
        &[TASK_COLUMN, LABEL_COLUMN, SCORE_COLUMN]
    } else {
        &[TASK_COLUMN, VALUE_COLUMN]
    };
    let attr_names: Vec<String> = match &space {
        Some(s) => s.attributes().iter().map(|a| a.name.clone()).collect(),
        None => headers
            .iter()
            .filter(|h| !reserved.contains(&h.as_str()))
            .cloned()
            .collect(),
    };
    let mut attr_cols = Vec::with_capacity(attr_names.len());
    for name in &attr_names {
        let idx = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::data(format!("CSV is missing attribute column `{name}`")))?;
        attr_cols.push(idx);
    }
    let find = |name: &str| headers.iter().position(|h| h == name);
    let task_col = find(TASK_COLUMN);
    let value_col = find(VALUE_COLUMN);
    let label_col = find(LABEL_COLUMN);
    let score_col = find(SCORE_COLUMN);
    if auc {
        if label_col.is_none() || score_col.is_none() {
            return Err(CliError::data(
                "AUC mode requires `label` and `score` columns",
            ));
        }
    } else if value_col.is_none() {
        return Err(CliError::data("CSV is missing the `value` column"));
    }

    // first pass for inferred level labels
    let space = match space {
        Some(s) => s,
        None => {
            let mut levels: Vec<std::collections::BTreeSet<String>> =
                vec![Default::default(); attr_names.len()];
            for record in reader.records() {
                let record = record?;
                for (a, &col) in attr_cols.iter().enumerate() {
                    if let Some(v) = record.get(col) {
                        levels[a].insert(v.trim().to_string());
                    }
                }
            }
            let attrs: Vec<Attribute> = attr_names
                .iter()
                .zip(levels)
                .map(|(name, set)| Attribute::new(name.clone(), set.into_iter().collect()))
                .collect();
            reader = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_path(path)?;
            AttributeSpace::new(attrs)?
        }
    };
    let space = Arc::new(space);

    let mut rows = Vec::new();
    let mut task_ids: Vec<String> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record.map_err(|e| CliError::data(format!("line {line}: {e}")))?;
        let mut classes = Vec::with_capacity(attr_cols.len());
        for (a, &col) in attr_cols.iter().enumerate() {
            let label = record
                .get(col)
                .ok_or_else(|| CliError::data(format!("line {line}: missing field")))?;
            classes.push(
                space
                    .class_of_label(a, label)
                    .map_err(|e| CliError::data(format!("line {line}: {e}")))?,
            );
        }
        let group = space.group_index(&classes)? - 1;
        let task = task_col
            .and_then(|c| record.get(c))
            .filter(|s| !s.is_empty())
            .unwrap_or(DEFAULT_TASK_ID)
            .to_string();
        let (value, label) = if auc {
            let raw_label = record.get(label_col.unwrap()).unwrap_or_default();
            let label = match raw_label {
                "0" | "false" => false,
                "1" | "true" => true,
                other => {
                    return Err(CliError::data(format!(
                        "line {line}: label `{other}` is not 0/1"
                    )))
                }
            };
            let score: f64 = record
                .get(score_col.unwrap())
                .unwrap_or_default()
                .parse()
                .map_err(|e| CliError::data(format!("line {line}: bad score: {e}")))?;
            (score, Some(label))
        } else {
            let value: f64 = record
                .get(value_col.unwrap())
                .unwrap_or_default()
                .parse()
                .map_err(|e| CliError::data(format!("line {line}: bad value: {e}")))?;
            (value, None)
        };
        if !task_ids.contains(&task) {
            task_ids.push(task.clone());
        }
        rows.push(RawRow {
            task,
            group,
            value,
            label,
        });
    }
    if rows.is_empty() {
        return Err(CliError::data("CSV contains no data rows"));
    }
    task_ids.sort();
    Ok(RawData {
        space,
        rows,
        task_ids,
        auc,
    })
}

/// Summarize mean-metric rows (one batch per task, shared variance).
pub fn summaries_from_rows<'a, I>(
    space: &Arc<AttributeSpace>,
    task_ids: &[String],
    rows: I,
    config: &suremap::SummarizeConfig,
) -> CliResult<NamedSummaries>
where
    I: IntoIterator<Item = &'a RawRow>,
{
    let mut batches: Vec<RecordBatch> = task_ids
        .iter()
        .map(|_| RecordBatch::new(space.clone()))
        .collect();
    let index: BTreeMap<&str, usize> = task_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    for row in rows {
        let slot = *index
            .get(row.task.as_str())
            .ok_or_else(|| CliError::data(format!("unknown task id `{}`", row.task)))?;
        batches[slot].push_group(row.group, row.value);
    }
    if batches.iter().any(|b| b.is_empty()) {
        return Err(CliError::data(
            "every task must have at least one row after resampling",
        ));
    }
    let summaries = suremap::summary::summarize_multi(&batches, config)?;
    Ok(task_ids.iter().cloned().zip(summaries).collect())
}

/// Summarize AUC rows: per-group Mann-Whitney AUC with its rank-statistic
/// variance. Groups with no rows or a single class are marked missing.
pub fn auc_summaries_from_rows<'a, I>(
    space: &Arc<AttributeSpace>,
    task_ids: &[String],
    rows: I,
) -> CliResult<NamedSummaries>
where
    I: IntoIterator<Item = &'a RawRow>,
{
    let d = space.group_count();
    let t_count = task_ids.len();
    let index: BTreeMap<&str, usize> = task_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut neg: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); d]; t_count];
    let mut pos: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); d]; t_count];
    for row in rows {
        let t = *index
            .get(row.task.as_str())
            .ok_or_else(|| CliError::data(format!("unknown task id `{}`", row.task)))?;
        let label = row
            .label
            .ok_or_else(|| CliError::data("AUC summarization needs labeled rows"))?;
        if label {
            pos[t][row.group].push(row.value);
        } else {
            neg[t][row.group].push(row.value);
        }
    }
    let mut out = Vec::with_capacity(t_count);
    for (t, id) in task_ids.iter().enumerate() {
        let mut y = DVector::zeros(d);
        let mut n = vec![0u64; d];
        let mut var = DVector::zeros(d);
        for g in 0..d {
            // single-class groups cannot carry an AUC; treat them as missing
            if neg[t][g].is_empty() || pos[t][g].is_empty() {
                continue;
            }
            y[g] = mann_whitney_auc(&neg[t][g], &pos[t][g])?;
            n[g] = (neg[t][g].len() + pos[t][g].len()) as u64;
            var[g] = auc_group_variance(neg[t][g].len() as u64, pos[t][g].len() as u64)?;
        }
        let mut summary = TaskSummary::new(space.clone(), y, n, 1.0);
        summary.variance_override = Some(var);
        out.push((id.clone(), summary));
    }
    Ok(out)
}

/// Write `text` to `path`, or to stdout when no path is given.
pub fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => {
            fs::write(p, text)?;
            Ok(())
        }
        None if text.ends_with('\n') => {
            print!("{text}");
            Ok(())
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}
