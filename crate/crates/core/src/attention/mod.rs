//! Attention over the quantized representation: the 2D-Attention baseline
//! and three self-attention variants (codeword-temporal, codeword, temporal).

mod dropout;
mod self_attention;
mod two_d;

pub use dropout::{attention_dropout, dropout_mask};
pub use self_attention::{
    att_csa, att_ctsa, att_tsa, self_attention_backward, self_attention_forward, AttentionHead,
    HeadForward, HeadGrads, Pass, SelfAttForward, SelfAttGrads, SelfAttOp, SelfAttParams,
    SelfAttVariant,
};
pub use two_d::{
    att_2da, att_2da_backward, att_2da_forward, Att2DAForward, Att2DAGrads, Att2DAMode,
    Att2DAOp, Att2DAParams,
};
