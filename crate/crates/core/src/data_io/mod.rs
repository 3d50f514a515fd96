//! Dataset loaders, input binarization and on-disk formats.

mod cam_dump;
mod dataset;
mod folder;
mod idx;
mod model_file;

pub use cam_dump::{
    load_cam_dump, save_cam_dump, save_placement_table, CamDump, CAM_DUMP_MAGIC, CAM_DUMP_VERSION,
};
pub use dataset::{binarize_dataset, BinaryDataset, Dataset, DEFAULT_BINARIZE_THRESHOLD};
pub use folder::{load_image_folder, preprocess_image};
pub use idx::{
    load_idx, load_idx_classes, load_mnist, parse_idx_images, parse_idx_labels, read_maybe_gz,
    MnistSplit, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, MNIST_CLASSES, MNIST_DIR_ENV,
};
pub use model_file::{
    load_model, model_file_size, model_from_bytes, model_to_bytes, save_model, MODEL_MAGIC,
    MODEL_VERSION,
};
