//! Socio-technical analytics for incubator projects. Mailing-list and commit
//! history become monthly developer networks whose metrics feed a month by
//! month graduation forecast; everything is persisted as a static JSON tree.

pub mod corpusgen;
pub mod forecast;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod store;

pub use forecast::{ForecastModel, ForecastSeries, TurnEvent};
pub use graph::{Flavor, Snapshot};
pub use ingest::{Commit, DeveloperId, Email, IdentityMap, ProjectInfo, ProjectStatus};
pub use metrics::{FeatureVector, MetricsRecord};
pub use store::{Corpus, MonthBundle};
