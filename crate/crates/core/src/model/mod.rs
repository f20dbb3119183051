pub mod checkpoint;
mod config;
mod network;
mod vocab;

pub use config::ModelConfig;
pub use network::{
    attend, attention_log_likelihood, attention_step_log_probs, blstm_layer, ctc_head, decode_step,
    encode, initial_attention, initial_decoder_state, prepare_attention, AttentionMemory,
    DecoderState, EncoderState, ParamGroup, Seq2SeqModel,
};
pub use vocab::{VocabEntry, Vocabulary, SPECIAL};
