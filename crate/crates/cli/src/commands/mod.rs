pub mod corpus;
pub mod eval;
pub mod finetune;
pub mod fit;
pub mod pretrain;
pub mod probe;
pub mod report;
pub mod sweep;
pub mod tokenizer;
