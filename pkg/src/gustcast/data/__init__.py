"""Raw data handling: NWP cubes, power series, windows, splits and synthetic farms."""
from .features import (ConstantSeriesError, MinMaxAnchors, PowerSeries, cyclic_time_features, fill_short_gaps,
                       fit_minmax, minmax_fit_transform)
from .io import PrepareConfig, load_panel, load_prepared, prepare_farm, read_manifest, save_panel
from .nwp import (ARPEGE, GFS, SOURCES, NwpCube, NwpSourceSpec, interpolate_gfs, level_correlations, pearson,
                  rank_levels, select_levels_by_correlation, wind_speed)
from .ramps import class_weights, ramp_labels
from .synthetic import SyntheticConfig, generate_synthetic_farm, power_curve
from .windows import (HORIZON, LOOKBACK, N_FARMS, FarmPanel, Split, SplitSpec, WindowedDataset, concat_farms_global,
                      holdout_start, split_train_val_test, tabular_column_names, tabular_features, window_samples)
