"""Multi-chart latent-space auto-encoders and an exact PL-to-ReLU compiler."""

from .manifolds import (FpsResult, ManifoldSpec, PointCloud, delta_density,
                        farthest_point_sampling, load_idx_images,
                        load_pointcloud_csv, sample, save_pointcloud_csv)
from .metrics import (EvalReport, LatentSample, consecutive_latent_distances,
                      coverage, evaluate, geodesic_length, geodesic_polyline,
                      reconstruction_error, unfaithfulness)
from .model import (ChartAutoencoder, ChartConfig, ForwardResult, Mlp, MlpSpec,
                    cycle_residual, lipschitz_penalty, load_model,
                    orientation_penalty, pca_frame, pretrain_loss, prune_charts,
                    save_model, training_loss, transition)
from .simplicial import (LocalChart, ReluNetwork, SampleBound, SimplicialComplex,
                         build_local_chart, chi_indicator, compile_bounds,
                         compile_pl, delaunay_2d, hat_function, load_complex_json,
                         load_relu_network, path_complex_1d, relu_min2,
                         relu_min_tree, sample_bound, save_complex_json,
                         save_relu_network, verify_faithfulness)
from .tensor import Adam, CheckpointError, Tensor, load_tensors, save_tensors, spectral_norm
from .training import (TrainConfig, TrainReport, TrainingDiverged,
                       evaluate_checkpoint, pretrain, split_holdout, train)

__version__ = "0.1.0"
