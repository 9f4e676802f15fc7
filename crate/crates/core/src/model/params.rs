use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::tensor::{Tape, Tensor, Var};

const INIT_RANGE: f64 = 0.05;

/// Weights of one encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub query: T,
    pub key: T,
    pub value: T,
    pub output: T,
    pub attn_norm_gain: T,
    pub attn_norm_bias: T,
    pub ffn_in: T,
    pub ffn_in_bias: T,
    pub ffn_out: T,
    pub ffn_out_bias: T,
    pub ffn_norm_gain: T,
    pub ffn_norm_bias: T,
}

/// All model weights, generic over what is stored per parameter: tensors for
/// the model itself, tape handles during a pass, flat gradients afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub token_embedding: T,
    pub position_embedding: T,
    pub segment_embedding: T,
    pub blocks: Vec<BlockParams<T>>,
    pub pooler_weight: T,
    pub pooler_bias: T,
    pub span_start: T,
    pub span_end: T,
    pub na_weight: T,
    pub na_bias: T,
    pub option_weight: T,
    pub option_bias: T,
}

pub type ModelParams = Params<Tensor>;
pub type ParamVars = Params<Var>;

impl<T> BlockParams<T> {
    fn map<'s, U>(&'s self, f: &mut impl FnMut(&'s T) -> U) -> BlockParams<U> {
        BlockParams {
            query: f(&self.query),
            key: f(&self.key),
            value: f(&self.value),
            output: f(&self.output),
            attn_norm_gain: f(&self.attn_norm_gain),
            attn_norm_bias: f(&self.attn_norm_bias),
            ffn_in: f(&self.ffn_in),
            ffn_in_bias: f(&self.ffn_in_bias),
            ffn_out: f(&self.ffn_out),
            ffn_out_bias: f(&self.ffn_out_bias),
            ffn_norm_gain: f(&self.ffn_norm_gain),
            ffn_norm_bias: f(&self.ffn_norm_bias),
        }
    }

    fn entries(&self) -> [(&'static str, &T); 12] {
        [
            ("query", &self.query),
            ("key", &self.key),
            ("value", &self.value),
            ("output", &self.output),
            ("attn_norm_gain", &self.attn_norm_gain),
            ("attn_norm_bias", &self.attn_norm_bias),
            ("ffn_in", &self.ffn_in),
            ("ffn_in_bias", &self.ffn_in_bias),
            ("ffn_out", &self.ffn_out),
            ("ffn_out_bias", &self.ffn_out_bias),
            ("ffn_norm_gain", &self.ffn_norm_gain),
            ("ffn_norm_bias", &self.ffn_norm_bias),
        ]
    }

    fn entries_mut(&mut self) -> [(&'static str, &mut T); 12] {
        [
            ("query", &mut self.query),
            ("key", &mut self.key),
            ("value", &mut self.value),
            ("output", &mut self.output),
            ("attn_norm_gain", &mut self.attn_norm_gain),
            ("attn_norm_bias", &mut self.attn_norm_bias),
            ("ffn_in", &mut self.ffn_in),
            ("ffn_in_bias", &mut self.ffn_in_bias),
            ("ffn_out", &mut self.ffn_out),
            ("ffn_out_bias", &mut self.ffn_out_bias),
            ("ffn_norm_gain", &mut self.ffn_norm_gain),
            ("ffn_norm_bias", &mut self.ffn_norm_bias),
        ]
    }
}

impl<T> Params<T> {
    pub fn map<'s, U>(&'s self, mut f: impl FnMut(&'s T) -> U) -> Params<U> {
        Params {
            token_embedding: f(&self.token_embedding),
            position_embedding: f(&self.position_embedding),
            segment_embedding: f(&self.segment_embedding),
            blocks: self.blocks.iter().map(|b| b.map(&mut f)).collect(),
            pooler_weight: f(&self.pooler_weight),
            pooler_bias: f(&self.pooler_bias),
            span_start: f(&self.span_start),
            span_end: f(&self.span_end),
            na_weight: f(&self.na_weight),
            na_bias: f(&self.na_bias),
            option_weight: f(&self.option_weight),
            option_bias: f(&self.option_bias),
        }
    }

    /// Named parameters in a fixed order (the checkpoint order).
    pub fn entries(&self) -> Vec<(String, &T)> {
        let mut out = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("position_embedding".to_string(), &self.position_embedding),
            ("segment_embedding".to_string(), &self.segment_embedding),
        ];
        for (i, block) in self.blocks.iter().enumerate() {
            out.extend(block.entries().into_iter().map(|(n, t)| (format!("blocks.{i}.{n}"), t)));
        }
        out.extend([
            ("pooler_weight".to_string(), &self.pooler_weight),
            ("pooler_bias".to_string(), &self.pooler_bias),
            ("span_start".to_string(), &self.span_start),
            ("span_end".to_string(), &self.span_end),
            ("na_weight".to_string(), &self.na_weight),
            ("na_bias".to_string(), &self.na_bias),
            ("option_weight".to_string(), &self.option_weight),
            ("option_bias".to_string(), &self.option_bias),
        ]);
        out
    }

    pub fn entries_mut(&mut self) -> Vec<(String, &mut T)> {
        let mut out = vec![
            ("token_embedding".to_string(), &mut self.token_embedding),
            ("position_embedding".to_string(), &mut self.position_embedding),
            ("segment_embedding".to_string(), &mut self.segment_embedding),
        ];
        for (i, block) in self.blocks.iter_mut().enumerate() {
            out.extend(block.entries_mut().into_iter().map(|(n, t)| (format!("blocks.{i}.{n}"), t)));
        }
        out.extend([
            ("pooler_weight".to_string(), &mut self.pooler_weight),
            ("pooler_bias".to_string(), &mut self.pooler_bias),
            ("span_start".to_string(), &mut self.span_start),
            ("span_end".to_string(), &mut self.span_end),
            ("na_weight".to_string(), &mut self.na_weight),
            ("na_bias".to_string(), &mut self.na_bias),
            ("option_weight".to_string(), &mut self.option_weight),
            ("option_bias".to_string(), &mut self.option_bias),
        ]);
        out
    }
}

#[derive(Clone, Copy)]
enum Init {
    Uniform,
    Zeros,
    Ones,
}

impl ModelParams {
    /// Seeded initialization: weight matrices and embeddings uniform in
    /// `[-0.05, 0.05]`, biases zero, normalization gains one.
    pub fn init(config: &ModelConfig) -> Self {
        let h = config.hidden_dim;
        let ffn = config.ffn_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut make = |shape: Vec<usize>, init: Init| {
            let numel: usize = shape.iter().product();
            let data = match init {
                Init::Uniform => (0..numel).map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE)).collect(),
                Init::Zeros => vec![0.0; numel],
                Init::Ones => vec![1.0; numel],
            };
            Tensor::new(shape, data).expect("valid init shape").with_grad()
        };
        let token_embedding = make(vec![config.vocab_size, h], Init::Uniform);
        let position_embedding = make(vec![config.max_seq_len, h], Init::Uniform);
        let segment_embedding = make(vec![2, h], Init::Uniform);
        let blocks = (0..config.num_encoder_blocks)
            .map(|_| BlockParams {
                query: make(vec![h, h], Init::Uniform),
                key: make(vec![h, h], Init::Uniform),
                value: make(vec![h, h], Init::Uniform),
                output: make(vec![h, h], Init::Uniform),
                attn_norm_gain: make(vec![h], Init::Ones),
                attn_norm_bias: make(vec![h], Init::Zeros),
                ffn_in: make(vec![h, ffn], Init::Uniform),
                ffn_in_bias: make(vec![ffn], Init::Zeros),
                ffn_out: make(vec![ffn, h], Init::Uniform),
                ffn_out_bias: make(vec![h], Init::Zeros),
                ffn_norm_gain: make(vec![h], Init::Ones),
                ffn_norm_bias: make(vec![h], Init::Zeros),
            })
            .collect();
        Params {
            token_embedding,
            position_embedding,
            segment_embedding,
            blocks,
            pooler_weight: make(vec![h, h], Init::Uniform),
            pooler_bias: make(vec![h], Init::Zeros),
            span_start: make(vec![h], Init::Uniform),
            span_end: make(vec![h], Init::Uniform),
            na_weight: make(vec![h], Init::Uniform),
            na_bias: make(Vec::new(), Init::Zeros),
            option_weight: make(vec![h], Init::Uniform),
            option_bias: make(Vec::new(), Init::Zeros),
        }
    }

    /// Records every parameter as a borrowed leaf on `tape`.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>, requires_grad: bool) -> ParamVars {
        self.map(|t| tape.leaf_with(t, requires_grad))
    }

    pub fn num_values(&self) -> usize {
        self.entries().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, t) in self.entries_mut() {
            t.zero_grad();
        }
    }
}
