//! Shared vocabulary: properties, values, measurements, uploads, data
//! sources, campaigns and accounts.

pub mod catalog;
pub mod model;
pub mod property;
pub mod value;

pub use catalog::{Catalog, PropertyRow};
pub use model::{
    Account, AccountId, ActivationState, Campaign, DataSourceType, DataSourceVariant, Measurement, UnixTime,
    Upload, UploadError,
};
pub use property::{validate_property_name, NameVerdict, PropertyDescriptor, ValueFormat};
pub use value::{canonicalize, parse_value, render_value, RawValue, ValueError};
