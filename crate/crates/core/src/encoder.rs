//! Input-column encoder: one shared FC block for the numeric columns, an
//! embedding + FC block per categorical column, and an untrainable hashing
//! block per textual column, concatenated into the flat context vector.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Cell, ColumnKind, Dataset, TableStats};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::{ParamId, ParamStore, Tensor};
use crate::text::{hash_features, HashConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Width of the shared numeric FC block.
    pub d_n: usize,
    /// Embedding + FC width per categorical column.
    pub d_c: usize,
    /// Hashing dimension per textual column.
    pub d_t: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_n: 100,
            d_c: 10,
            d_t: 128,
        }
    }
}

/// Column layout of the context vector, fixed by the schema: the numeric
/// block first, then categorical blocks, then text blocks, each kind in
/// schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayout {
    pub numeric_columns: Vec<String>,
    /// (column name, category count including "missing")
    pub categorical_columns: Vec<(String, usize)>,
    pub text_columns: Vec<String>,
    pub config: EncoderConfig,
}

impl EncoderLayout {
    pub fn from_schema(
        schema: &crate::data::Schema,
        stats: &TableStats,
        config: EncoderConfig,
    ) -> Result<EncoderLayout> {
        if config.d_n == 0 || config.d_c == 0 || config.d_t == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        let numeric_columns = schema.input_names(ColumnKind::Numeric);
        let mut categorical_columns = Vec::new();
        for name in schema.input_names(ColumnKind::Categorical) {
            let c = stats.categories(&name)?.len();
            categorical_columns.push((name, c));
        }
        let text_columns = schema.input_names(ColumnKind::Text);
        let layout = EncoderLayout {
            numeric_columns,
            categorical_columns,
            text_columns,
            config,
        };
        if layout.d_model() == 0 {
            return Err(Error::Config("schema yields an empty context vector".into()));
        }
        Ok(layout)
    }

    /// Context vector length: d_n (if any numeric input) + d_c per
    /// categorical column + d_t per text column.
    pub fn d_model(&self) -> usize {
        let numeric = if self.numeric_columns.is_empty() {
            0
        } else {
            self.config.d_n
        };
        numeric
            + self.categorical_columns.len() * self.config.d_c
            + self.text_columns.len() * self.config.d_t
    }
}

/// Learned encoder parameters.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    /// (weight (n_numeric, d_n), bias (d_n)), present when the schema has
    /// numeric input columns.
    pub numeric: Option<(ParamId, ParamId)>,
    /// Per categorical column: (embedding (C, d_c), fc weight (d_c, d_c),
    /// fc bias (d_c)).
    pub categorical: Vec<(ParamId, ParamId, ParamId)>,
}

impl EncoderParams {
    pub fn register(
        store: &mut ParamStore,
        layout: &EncoderLayout,
        rng: &mut ChaCha8Rng,
    ) -> EncoderParams {
        let cfg = layout.config;
        let numeric = if layout.numeric_columns.is_empty() {
            None
        } else {
            let n_in = layout.numeric_columns.len();
            let w = store.add(
                "encoder.numeric.weight",
                Tensor::glorot_uniform(n_in, cfg.d_n, rng),
            );
            let b = store.add("encoder.numeric.bias", Tensor::zeros(vec![cfg.d_n]));
            Some((w, b))
        };
        let mut categorical = Vec::new();
        for (name, c) in &layout.categorical_columns {
            let emb = store.add(
                format!("encoder.categorical.{name}.embedding"),
                Tensor::normal(vec![*c, cfg.d_c], 0.02, rng),
            );
            let w = store.add(
                format!("encoder.categorical.{name}.fc.weight"),
                Tensor::glorot_uniform(cfg.d_c, cfg.d_c, rng),
            );
            let b = store.add(
                format!("encoder.categorical.{name}.fc.bias"),
                Tensor::zeros(vec![cfg.d_c]),
            );
            categorical.push((emb, w, b));
        }
        EncoderParams {
            numeric,
            categorical,
        }
    }

    /// Re-resolve parameter ids by name (checkpoint load path).
    pub fn lookup(store: &ParamStore, layout: &EncoderLayout) -> Result<EncoderParams> {
        let find = |name: String| {
            store
                .id_of(&name)
                .ok_or(Error::Checkpoint(format!("missing tensor {name:?}")))
        };
        let numeric = if layout.numeric_columns.is_empty() {
            None
        } else {
            Some((
                find("encoder.numeric.weight".into())?,
                find("encoder.numeric.bias".into())?,
            ))
        };
        let mut categorical = Vec::new();
        for (name, _) in &layout.categorical_columns {
            categorical.push((
                find(format!("encoder.categorical.{name}.embedding"))?,
                find(format!("encoder.categorical.{name}.fc.weight"))?,
                find(format!("encoder.categorical.{name}.fc.bias"))?,
            ));
        }
        Ok(EncoderParams {
            numeric,
            categorical,
        })
    }
}

/// Pre-extracted features for one row: standardized numeric values, dense
/// category indices, and the hashed text blocks. Pure data; building these
/// is safe to parallelize.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedRow {
    pub numeric: Vec<f32>,
    pub category_ids: Vec<usize>,
    pub text_blocks: Vec<Vec<f32>>,
}

/// Featurize every row of a pre-processed (filled + standardized) dataset.
pub fn featurize(ds: &Dataset, layout: &EncoderLayout, hash_seed: u32) -> Result<Vec<FeaturizedRow>> {
    let stats = ds
        .stats
        .as_ref()
        .ok_or_else(|| Error::Schema("dataset must be preprocessed before featurizing".into()))?;
    let hash_cfg = HashConfig {
        dimension: layout.config.d_t,
        seed: hash_seed,
    };
    let mut out = Vec::with_capacity(ds.len());
    for r in 0..ds.len() {
        let mut numeric = Vec::with_capacity(layout.numeric_columns.len());
        for name in &layout.numeric_columns {
            let v = match ds.cell(r, name)? {
                Cell::Number(v) => *v,
                // A missing value at impute time falls back to the training
                // mean, i.e. standardized 0.
                _ => 0.0,
            };
            numeric.push(v);
        }
        let mut category_ids = Vec::with_capacity(layout.categorical_columns.len());
        for (name, _) in &layout.categorical_columns {
            category_ids.push(stats.category_index(name, ds.cell(r, name)?)?);
        }
        let mut text_blocks = Vec::with_capacity(layout.text_columns.len());
        for name in &layout.text_columns {
            let text = ds.cell(r, name)?.as_str().unwrap_or("");
            text_blocks.push(hash_features(text, &hash_cfg));
        }
        out.push(FeaturizedRow {
            numeric,
            category_ids,
            text_blocks,
        });
    }
    Ok(out)
}

/// Encode a batch of featurized rows into the `(batch, d_model)` context
/// matrix on the graph.
pub fn encode_batch(
    graph: &mut Graph,
    store: &ParamStore,
    params: &EncoderParams,
    layout: &EncoderLayout,
    rows: &[FeaturizedRow],
    frozen: bool,
) -> Result<NodeId> {
    let b = rows.len();
    if b == 0 {
        return Err(Error::EmptyInput("encode_batch got no rows"));
    }
    let lease = |graph: &mut Graph, id: ParamId| {
        if frozen {
            graph.param_frozen(store, id)
        } else {
            graph.param(store, id)
        }
    };
    let mut blocks: Vec<NodeId> = Vec::new();

    if let Some((w_id, b_id)) = params.numeric {
        let n_in = layout.numeric_columns.len();
        let mut data = Vec::with_capacity(b * n_in);
        for row in rows {
            debug_assert_eq!(row.numeric.len(), n_in);
            data.extend_from_slice(&row.numeric);
        }
        let x = graph.constant(vec![b, n_in], data)?;
        let w = lease(graph, w_id);
        let bias = lease(graph, b_id);
        let h = graph.matmul(x, w)?;
        blocks.push(graph.add(h, bias)?);
    }

    for (ci, (emb_id, w_id, b_id)) in params.categorical.iter().enumerate() {
        let c_count = layout.categorical_columns[ci].1;
        let ids: Vec<usize> = rows.iter().map(|r| r.category_ids[ci]).collect();
        if let Some(&bad) = ids.iter().find(|&&i| i >= c_count) {
            return Err(Error::CategoryOutOfRange {
                column: layout.categorical_columns[ci].0.clone(),
                index: bad,
                size: c_count,
            });
        }
        let emb = lease(graph, *emb_id);
        let looked = graph.embedding_lookup(emb, &ids)?;
        let w = lease(graph, *w_id);
        let bias = lease(graph, *b_id);
        let h = graph.matmul(looked, w)?;
        blocks.push(graph.add(h, bias)?);
    }

    for (ti, _) in layout.text_columns.iter().enumerate() {
        let d_t = layout.config.d_t;
        let mut data = Vec::with_capacity(b * d_t);
        for row in rows {
            data.extend_from_slice(&row.text_blocks[ti]);
        }
        // Untrainable featurizer: a plain constant, no gradient path.
        blocks.push(graph.constant(vec![b, d_t], data)?);
    }

    graph.concat(&blocks)
}
