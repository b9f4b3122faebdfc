mod embed;
mod evaluate;
mod fit_combiner;
mod generate;
mod report;
mod score;
mod train_encoder;
mod train_flow;

pub use embed::cmd_embed;
pub use evaluate::cmd_evaluate;
pub use fit_combiner::cmd_fit_combiner;
pub use generate::cmd_generate;
pub use report::cmd_report;
pub use score::{cmd_score, Method};
pub use train_encoder::cmd_train_encoder;
pub use train_flow::cmd_train_flow;
