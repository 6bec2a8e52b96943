"""Pipeline orchestration: one subcommand per phase.

    synth     generate a synthetic input-file world
    ingest    normalize features and build the training table
    train     fit (optionally tune) the boosted-tree model
    evaluate  cross-validation protocols, importance tables
    predict   per-tile estimates from a trained model
    aggregate privacy aggregation, admin aggregation, validation
    awe       absolute wealth conversion and distribution export
    error     error-model fit, per-tile expected error, summaries
    target    budget-constrained targeting simulations

Every output CSV starts with a manifest comment (version, seed, input
hashes); re-running a subcommand with identical inputs, seed, and any
``--threads`` value is byte-identical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from wealthmap import __version__, csvio, figures
from wealthmap.csvio import Manifest
from wealthmap.evaluation import (
    PROTOCOLS,
    cross_country_matrix,
    grid_search,
    run_protocol,
    subset_r_squared,
    univariate_importance,
)
from wealthmap.exceptions import InvalidInputError, SchemaError, WealthmapError
from wealthmap.gbdt import (
    GbdtParams,
    gain_importance,
    model_from_text,
    model_to_text,
    train as gbdt_train,
)
from wealthmap.ingest import (
    load_admin_assignment,
    load_clusters,
    load_country_stats,
    load_features,
    load_households,
    load_population,
    normalize_per_country,
)
from wealthmap.labels import build_training_table
from wealthmap.mapping import (
    AGGREGATION_ZOOM_CAP,
    PRIVACY_POPULATION_THRESHOLD,
    TileEstimates,
    aggregate_to_units,
    estimates_geojson,
    predict_tiles,
    privacy_aggregate,
    set_population,
    tile_centers,
    validate_units,
)
from wealthmap.synth import ADMIN_LEVELS, SynthConfig, load_target_households, synth_world
from wealthmap.targeting import (
    DEFAULT_BUDGETS,
    assign_knn_clusters,
    assign_ml_tiles,
    assign_ml_units,
    assign_survey_units,
    emit_table,
    run_scheme,
)
from wealthmap.tilegrid import ANALYSIS_ZOOM, LatLon, latlon_to_tile, parse_quadkey, quadkey, tile_center
from wealthmap.uncertainty import (
    ClusterIndex,
    SPECIFICATIONS,
    build_error_predictors,
    country_error_summary,
    dissimilarity_curve,
    fit_least_squares,
    load_country_attributes,
    predict_error,
)

RWI_COLUMNS = ["quadkey", "latitude", "longitude", "rwi", "aggregation_level", "masked", "population"]


def _manifest(seed: int | None, inputs: list[str]) -> Manifest:
    return Manifest.for_inputs(__version__, seed, inputs)


def _out(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _params_from_args(args) -> GbdtParams:
    return GbdtParams(
        max_depth=args.max_depth,
        min_child_weight=args.min_child_weight,
        n_trees=args.n_trees,
        learning_rate=args.learning_rate,
        seed=args.seed,
    )


def _add_params_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-depth", type=int, default=5)
    p.add_argument("--min-child-weight", type=float, default=1.0)
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--learning-rate", type=float, default=0.1)


# --- training-table round trip ---------------------------------------------

TRAINING_META = ["cluster_id", "country", "label", "lat", "lon", "urban", "n_households"]


def write_training_csv(path: str, observations, feature_names, manifest: Manifest) -> None:
    header = TRAINING_META + list(feature_names)
    rows = []
    for o in observations:
        rows.append(
            [o.cluster_id, o.country, o.rwi_label, o.centroid.lat, o.centroid.lon,
             1 if o.urban else 0, o.n_households]
            + [float(v) for v in o.features]
        )
    csvio.write_csv(path, header, rows, manifest)


def read_training_csv(path: str):
    header, rows = csvio.read_csv(path, required=TRAINING_META)
    feature_names = [c for c in header if c not in TRAINING_META]
    n = len(rows)
    X = np.empty((n, len(feature_names)))
    y = np.empty(n)
    lats = np.empty(n)
    lons = np.empty(n)
    urban = np.empty(n, dtype=bool)
    n_households = np.empty(n, dtype=int)
    countries = []
    cluster_ids = []
    for i, row in enumerate(rows):
        cluster_ids.append(row["cluster_id"])
        countries.append(row["country"])
        y[i] = csvio.parse_float(path, i + 1, "label", row["label"])
        lats[i] = csvio.parse_float(path, i + 1, "lat", row["lat"])
        lons[i] = csvio.parse_float(path, i + 1, "lon", row["lon"])
        urban[i] = row["urban"] == "1"
        n_households[i] = csvio.parse_int(path, i + 1, "n_households", row["n_households"])
        for j, name in enumerate(feature_names):
            X[i, j] = csvio.parse_float(path, i + 1, name, row[name])
    return {
        "cluster_ids": cluster_ids, "countries": countries, "X": X, "y": y,
        "lats": lats, "lons": lons, "urban": urban, "n_households": n_households,
        "feature_names": feature_names,
    }


def write_norm_stats_csv(path: str, norm_stats, feature_names, manifest: Manifest) -> None:
    rows = []
    for country in sorted(norm_stats):
        means, stds = norm_stats[country]
        for name, m, s in zip(feature_names, means, stds):
            rows.append([country, name, float(m), float(s)])
    csvio.write_csv(path, ["country", "feature", "mean", "std"], rows, manifest)


def read_norm_stats_csv(path: str, feature_names):
    _, rows = csvio.read_csv(path, required=["country", "feature", "mean", "std"])
    by_country: dict[str, dict[str, tuple[float, float]]] = {}
    for i, row in enumerate(rows):
        by_country.setdefault(row["country"], {})[row["feature"]] = (
            csvio.parse_float(path, i + 1, "mean", row["mean"]),
            csvio.parse_float(path, i + 1, "std", row["std"]),
        )
    out = {}
    for country, stats in by_country.items():
        missing = [f for f in feature_names if f not in stats]
        if missing:
            raise SchemaError(f"{path}: country {country!r} missing stats for {missing[:3]}...")
        out[country] = (
            np.array([stats[f][0] for f in feature_names]),
            np.array([stats[f][1] for f in feature_names]),
        )
    return out


def write_rwi_csv(path: str, estimates: TileEstimates, manifest: Manifest, error=None) -> None:
    lats, lons = tile_centers(estimates)
    header = list(RWI_COLUMNS) + (["error"] if error is not None else [])
    rows = []
    for i in range(estimates.n):
        row = [
            estimates.quadkeys[i], float(lats[i]), float(lons[i]), float(estimates.rwi[i]),
            int(estimates.aggregation_level[i]), 1 if estimates.masked[i] else 0,
            float(estimates.population[i]),
        ]
        if error is not None:
            row.append(float(error[i]))
        rows.append(row)
    csvio.write_csv(path, header, rows, manifest)


def read_rwi_csv(path: str) -> TileEstimates:
    _, rows = csvio.read_csv(path, required=RWI_COLUMNS)
    quadkeys = [row["quadkey"] for row in rows]
    est = TileEstimates.from_quadkeys(
        quadkeys,
        [csvio.parse_float(path, i + 1, "rwi", row["rwi"]) for i, row in enumerate(rows)],
        [csvio.parse_float(path, i + 1, "population", row["population"]) for i, row in enumerate(rows)],
    )
    est.aggregation_level = np.array(
        [csvio.parse_int(path, i + 1, "aggregation_level", row["aggregation_level"]) for i, row in enumerate(rows)]
    )
    est.masked = np.array([row["masked"] == "1" for row in rows])
    return est


# --- subcommands ------------------------------------------------------------


def cmd_synth(args) -> int:
    config = SynthConfig(
        countries=args.countries, tiles=args.tiles, clusters=args.clusters,
        households_per_cluster=args.households, target_households=args.target_households,
        seed=args.seed, feature_noise=args.feature_noise, label_noise=args.label_noise,
        spatial_noise=args.spatial_noise, household_noise=args.household_noise,
        urban_share=args.urban_share, jitter_scale=args.jitter_scale,
        landscape_mix=args.landscape_mix, population_mu=args.population_mu,
        population_sigma=args.population_sigma,
    )
    paths = synth_world(config, args.out)
    print(f"synth: wrote {len(paths)} files to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    inputs = [args.features, args.population, args.clusters, args.households]
    manifest = _manifest(args.seed, inputs)
    table = load_features(args.features)
    population = load_population(args.population)
    clusters = load_clusters(args.clusters)
    households = load_households(args.households)
    normalized = normalize_per_country(table)
    observations, diag = build_training_table(
        clusters, households, normalized, population, weighted_labels=args.weighted_labels
    )
    write_training_csv(_out(args, "training.csv"), observations, normalized.feature_names, manifest)
    write_norm_stats_csv(_out(args, "norm_stats.csv"), normalized.norm_stats, normalized.feature_names, manifest)
    print(
        f"ingest: {diag.n_joined} clusters joined, {diag.n_unjoinable} unjoinable; "
        f"training table -> {_out(args, 'training.csv')}"
    )
    return 0


def cmd_train(args) -> int:
    inputs = [args.training, args.norm_stats]
    manifest = _manifest(args.seed, inputs)
    data = read_training_csv(args.training)
    norm_stats = read_norm_stats_csv(args.norm_stats, data["feature_names"])
    params = _params_from_args(args)
    if args.tune != "none":
        best, report, rows = grid_search(
            data["X"], data["y"], data["countries"], protocol=args.tune,
            base=params, k=args.k, seed=args.seed,
            lats=data["lats"], lons=data["lons"], threads=args.threads,
        )
        csvio.write_csv(
            _out(args, "grid_search.csv"),
            ["max_depth", "min_child_weight", "cv_mse", "mean_country_r2"],
            [[g.max_depth, g.min_child_weight, g.cv_mse, g.mean_r2] for g in rows],
            manifest,
        )
        params = best
        print(f"train: tuned to max_depth={params.max_depth} min_child_weight={params.min_child_weight}")
    model = gbdt_train(
        data["X"], data["y"], params=params, feature_names=data["feature_names"], norm_stats=norm_stats
    )
    path = _out(args, "model.txt")
    with open(path, "w", encoding="utf-8") as f:
        f.write(manifest.line() + "\n")
        f.write(model_to_text(model))
    print(f"train: {params.n_trees} trees on {model.n_rows} rows -> {path}")
    return 0


def cmd_evaluate(args) -> int:
    manifest = _manifest(args.seed, [args.training])
    data = read_training_csv(args.training)
    params = _params_from_args(args)
    protocols = list(PROTOCOLS) if args.protocol == "all" else [args.protocol]
    report_rows = []
    per_protocol: dict[str, list[float]] = {}
    for protocol in protocols:
        report = run_protocol(
            protocol, data["X"], data["y"], data["countries"], params, k=args.k,
            seed=args.seed, lats=data["lats"], lons=data["lons"], threads=args.threads,
        )
        for fr in report.folds:
            report_rows.append([protocol, fr.country, fr.fold, fr.n_test, fr.r2, fr.mse])
        for country, value in report.per_country.items():
            report_rows.append([protocol, country, "mean", "", value, ""])
        report_rows.append([protocol, "ALL", "pooled", int(np.sum(report.oos_count)), report.pooled_r2, report.pooled_mse])
        tested = report.oos_count > 0
        groups = np.where(data["urban"], "urban", "rural")
        subset = subset_r_squared(data["y"][tested], report.oos_pred[tested], groups[tested])
        for group, value in subset.per_group.items():
            report_rows.append([protocol, "ALL", group, "", value, ""])
        per_protocol[protocol] = [v for v in report.per_country.values() if v is not None]
    csvio.write_csv(
        _out(args, "cv_report.csv"), ["protocol", "country", "fold", "n_test", "r2", "mse"],
        report_rows, manifest,
    )
    figures.cv_report_figure(per_protocol, _out(args, "cv_report.png"))

    uni = univariate_importance(data["X"], data["y"], data["countries"], data["feature_names"])
    model = gbdt_train(data["X"], data["y"], params=params, feature_names=data["feature_names"])
    gains, counts = gain_importance(model)
    importance_rows = [["univariate", c, f, v, ""] for c, f, v in uni]
    importance_rows += [
        ["gain", "", name, float(g), int(k)]
        for name, g, k in zip(data["feature_names"], gains, counts)
    ]
    csvio.write_csv(
        _out(args, "importance.csv"), ["kind", "country", "feature", "value", "splits"],
        importance_rows, manifest,
    )
    uni_by_feature: dict[str, list[float]] = {}
    for _, feature, value in uni:
        uni_by_feature.setdefault(feature, []).append(value)
    figures.importance_figure(
        uni_by_feature, dict(zip(data["feature_names"], gains)), _out(args, "importance.png")
    )

    if args.matrix:
        names, r2, mse = cross_country_matrix(
            data["X"], data["y"], data["countries"], params, k=args.k, seed=args.seed,
            threads=args.threads,
        )
        rows = []
        for i, test_c in enumerate(names):
            for j, train_c in enumerate(names):
                rows.append([test_c, train_c, float(r2[i, j]), float(mse[i, j])])
        csvio.write_csv(
            _out(args, "cross_country.csv"), ["test_country", "train_country", "r2", "mse"],
            rows, manifest,
        )
    print(f"evaluate: {len(protocols)} protocol(s) -> {_out(args, 'cv_report.csv')}")
    return 0


def cmd_predict(args) -> int:
    manifest = _manifest(args.seed, [args.model, args.features, args.population])
    with open(args.model, "r", encoding="utf-8") as f:
        model = model_from_text(f.read())
    table = load_features(args.features)
    population = load_population(args.population)
    estimates = predict_tiles(model, table)
    set_population(estimates, population)
    write_rwi_csv(_out(args, "rwi.csv"), estimates, manifest)
    lats, lons = tile_centers(estimates)
    figures.map_figure(lats, lons, estimates.rwi, _out(args, "rwi_map.png"))
    print(f"predict: {estimates.n} tiles -> {_out(args, 'rwi.csv')}")
    return 0


def cmd_aggregate(args) -> int:
    inputs = [args.rwi]
    if args.admin:
        inputs.append(args.admin)
    if args.truth:
        inputs.append(args.truth)
    manifest = _manifest(args.seed, inputs)
    estimates = read_rwi_csv(args.rwi)
    aggregated = privacy_aggregate(estimates, threshold=args.threshold, cap_zoom=args.cap_zoom)
    write_rwi_csv(_out(args, "rwi.csv"), aggregated, manifest)
    lats, lons = tile_centers(aggregated)
    figures.map_figure(lats, lons, aggregated.rwi, _out(args, "rwi_map.png"), masked=aggregated.masked)
    if args.geojson:
        doc = estimates_geojson(aggregated)
        doc["manifest"] = manifest.line()[2:]
        with open(_out(args, "rwi.geojson"), "w", encoding="utf-8") as f:
            json.dump(doc, f, separators=(",", ":"))
    n_pooled = int(np.sum(aggregated.aggregation_level < ANALYSIS_ZOOM))
    print(
        f"aggregate: {aggregated.n} tiles, {n_pooled} pooled above threshold "
        f"{args.threshold}, {int(aggregated.masked.sum())} masked"
    )
    if args.admin:
        levels = load_admin_assignment(args.admin)
        agg_rows = []
        validation_rows = []
        truth_by_level: dict[str, dict[str, float]] = {}
        truth_country: dict[str, str] = {}
        if args.truth:
            _, trows = csvio.read_csv(args.truth, required=["unit_id", "level", "country", "value"])
            for i, row in enumerate(trows):
                truth_by_level.setdefault(row["level"], {})[row["unit_id"]] = csvio.parse_float(
                    args.truth, i + 1, "value", row["value"]
                )
                truth_country[row["unit_id"]] = row["country"]
        for level in sorted(levels):
            result = aggregate_to_units(aggregated, levels[level], level=level)
            for unit in result.units.values():
                agg_rows.append([unit.unit_id, level, unit.mean_rwi, unit.population, unit.n_tiles])
            if level in truth_by_level:
                validation = validate_units(result.units, truth_by_level[level], truth_country)
                validation_rows.append([level, "ALL", validation.pooled_r2, validation.n_matched])
                for country, value in sorted(validation.per_country.items()):
                    validation_rows.append([level, country, value, ""])
                scatter_path = _out(args, f"validation_scatter_{level}.csv")
                csvio.write_csv(
                    scatter_path, ["unit_id", "truth", "predicted", "population"],
                    validation.scatter, manifest,
                )
        csvio.write_csv(
            _out(args, "admin_aggregates.csv"),
            ["unit_id", "level", "mean_rwi", "population", "n_tiles"], agg_rows, manifest,
        )
        if validation_rows:
            csvio.write_csv(
                _out(args, "validation.csv"), ["level", "country", "r2", "n_units"],
                validation_rows, manifest,
            )
            pooled = {r[0]: r[2] for r in validation_rows if r[1] == "ALL"}
            print("aggregate: unit validation R^2 " + ", ".join(f"{k}={v:.4f}" for k, v in pooled.items()))
    return 0


def cmd_awe(args) -> int:
    from wealthmap.awe import export_distribution, rwi_to_awe

    manifest = _manifest(args.seed, [args.rwi, args.features, args.stats])
    estimates = read_rwi_csv(args.rwi)
    table = load_features(args.features)
    country_of = dict(zip(table.quadkeys, table.countries))
    stats = load_country_stats(args.stats)
    by_country: dict[str, list[int]] = {}
    for i, qk in enumerate(estimates.quadkeys):
        if qk not in country_of:
            raise InvalidInputError(f"tile {qk} has no country in {args.features}")
        by_country.setdefault(country_of[qk], []).append(i)
    awe_values = np.empty(estimates.n)
    rank_q = np.empty(estimates.n)
    for country, idx in sorted(by_country.items()):
        if country not in stats:
            raise InvalidInputError(f"country {country!r} missing from {args.stats}")
        values, q = rwi_to_awe(estimates.rwi[idx], stats[country], mode=args.mode)
        awe_values[idx] = values
        rank_q[idx] = q
    rows = [
        [estimates.quadkeys[i], country_of[estimates.quadkeys[i]], float(estimates.rwi[i]),
         float(rank_q[i]), float(awe_values[i])]
        for i in range(estimates.n)
    ]
    csvio.write_csv(
        _out(args, "awe.csv"), ["quadkey", "country", "rwi", "rank_quantile", "awe_usd"],
        rows, manifest,
    )
    bins = export_distribution(awe_values, estimates.population, n_bins=args.bins)
    csvio.write_csv(
        _out(args, "awe_distribution.csv"), ["wealth_low", "wealth_high", "weight"], bins, manifest
    )
    figures.distribution_figure(bins, _out(args, "awe_distribution.png"))
    print(f"awe: {estimates.n} tiles across {len(by_country)} countries -> {_out(args, 'awe.csv')}")
    return 0


def cmd_error(args) -> int:
    inputs = [args.training, args.features, args.population, args.clusters, args.stats,
              args.attributes, args.rwi]
    manifest = _manifest(args.seed, inputs)
    data = read_training_csv(args.training)
    params = _params_from_args(args)
    report = run_protocol(
        args.protocol, data["X"], data["y"], data["countries"], params, k=args.k,
        seed=args.seed, lats=data["lats"], lons=data["lons"], threads=args.threads,
    )
    tested = report.oos_count > 0
    residuals = np.abs(data["y"] - report.oos_pred)[tested]
    squared = ((data["y"] - report.oos_pred) ** 2)[tested]
    resid_countries = [c for c, ok in zip(data["countries"], tested) if ok]

    clusters = load_clusters(args.clusters)
    index = ClusterIndex(
        [c.lat for c in clusters], [c.lon for c in clusters], [c.country for c in clusters]
    )
    stats = load_country_stats(args.stats)
    attrs = load_country_attributes(args.attributes)
    table = load_features(args.features)
    scalar_names = [f for f in table.feature_names if not f.startswith("img_pc_")]
    scalar_idx = [table.feature_names.index(f) for f in scalar_names]
    image_idx = [j for j, f in enumerate(table.feature_names) if f.startswith("img_pc_")]
    feat_by_qk = {qk: i for i, qk in enumerate(table.quadkeys)}
    cluster_pos = {c.cluster_id: c for c in clusters}

    # Align residual rows (tested training clusters, in order) with the
    # feature row of each cluster's containing tile; clusters whose tile
    # is outside the feature table drop out of the regression.
    tested_ids = [cid for cid, ok in zip(data["cluster_ids"], tested) if ok]
    keep_rows, tile_rows, lat_list, lon_list, cluster_countries = [], [], [], [], []
    for pos, cid in enumerate(tested_ids):
        c = cluster_pos.get(cid)
        if c is None:
            continue
        qk = quadkey(latlon_to_tile(LatLon(c.lat, c.lon), ANALYSIS_ZOOM))
        if qk not in feat_by_qk:
            continue
        keep_rows.append(pos)
        tile_rows.append(feat_by_qk[qk])
        lat_list.append(c.lat)
        lon_list.append(c.lon)
        cluster_countries.append(c.country)
    keep_mask = np.asarray(keep_rows, dtype=int)
    tile_rows = np.asarray(tile_rows, dtype=int)
    predictors = build_error_predictors(
        lat_list, lon_list, cluster_countries,
        table.values[tile_rows][:, scalar_idx], scalar_names, index, stats, attrs,
        specification=args.specification,
        image_features=table.values[tile_rows][:, image_idx] if args.specification == "imagery" else None,
        image_names=[table.feature_names[j] for j in image_idx],
    )
    model = fit_least_squares(residuals[keep_mask], predictors.matrix, predictor_names=predictors.names)
    csvio.write_csv(
        _out(args, "error_model.csv"), ["predictor", "beta", "se"],
        [[n, float(b), float(s)] for n, b, s in zip(model.predictor_names, model.beta, model.standard_errors)],
        manifest,
    )

    estimates = read_rwi_csv(args.rwi)
    tile_idx = [feat_by_qk[qk] for qk in estimates.quadkeys if qk in feat_by_qk]
    if len(tile_idx) != estimates.n:
        raise InvalidInputError("rwi.csv contains tiles absent from the feature table")
    lats, lons = tile_centers(estimates)
    tile_predictors = build_error_predictors(
        lats, lons, [table.countries[i] for i in tile_idx],
        table.values[tile_idx][:, scalar_idx], scalar_names, index, stats, attrs,
        specification=args.specification,
        image_features=table.values[tile_idx][:, image_idx] if args.specification == "imagery" else None,
        image_names=[table.feature_names[j] for j in image_idx],
    )
    tile_error = predict_error(model, tile_predictors.matrix)
    write_rwi_csv(_out(args, "rwi.csv"), estimates, manifest, error=tile_error)
    figures.map_figure(lats, lons, tile_error, _out(args, "error_map.png"), label="expected |error|")

    summary = country_error_summary(
        tile_error, [table.countries[i] for i in tile_idx], squared[keep_mask], cluster_countries
    )
    csvio.write_csv(
        _out(args, "error_summary.csv"),
        ["country", "n_tiles", "err_mean", "err_median", "err_sd", "mse_mean", "mse_median", "mse_sd"],
        [[r.country, r.n_tiles, r.err_mean, r.err_median, r.err_sd, r.mse_mean, r.mse_median, r.mse_sd]
         for r in summary],
        manifest,
    )
    print(
        f"error: fit on {model.n} clusters (R^2 {model.r2:.3f}); "
        f"expected error for {estimates.n} tiles -> {_out(args, 'rwi.csv')}"
    )

    if args.dissimilarity:
        names, r2m, msem = cross_country_matrix(
            data["X"], data["y"], data["countries"], params, k=args.k, seed=args.seed,
            threads=args.threads,
        )
        attr_matrix = np.array(
            [[attrs[c].area_km2, attrs[c].population, float(attrs[c].island),
              float(attrs[c].landlocked), attrs[c].dist_closest_survey_km,
              attrs[c].n_survey_neighbors, stats[c].gdp_pc, stats[c].gini] for c in names]
        )
        points, skipped = dissimilarity_curve(names, attr_matrix, msem)
        csvio.write_csv(
            _out(args, "dissimilarity.csv"),
            ["decile", "threshold", "mean_error", "n_countries"],
            [[p.decile, p.threshold, p.mean_error, p.n_countries] for p in points],
            manifest,
        )
        if skipped:
            print(f"error: dissimilarity curve skipped {len(skipped)} countries at some thresholds")
    return 0


def _parse_schemes(raw: str):
    out = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        kind, _, arg = item.partition(":")
        out.append((kind, arg))
    return out


def cmd_target(args) -> int:
    inputs = [args.households, args.rwi, args.admin, args.population, args.clusters,
              args.training, args.features]
    manifest = _manifest(args.seed, inputs)
    households = load_target_households(args.households)
    estimates = read_rwi_csv(args.rwi)
    levels = load_admin_assignment(args.admin)
    population = load_population(args.population)
    clusters = load_clusters(args.clusters)
    training = read_training_csv(args.training)
    table = load_features(args.features)
    country_of_tile = dict(zip(table.quadkeys, table.countries))
    budgets = sorted(float(b) for b in args.budgets.split(","))
    schemes = _parse_schemes(args.schemes)

    cluster_label_of = dict(zip(training["cluster_ids"], training["y"]))
    cluster_size_of = dict(zip(training["cluster_ids"], training["n_households"]))
    labeled_clusters = [c for c in clusters if c.cluster_id in cluster_label_of]

    tile_country = {}
    for qk in estimates.quadkeys:
        tile_country[qk] = country_of_tile.get(qk)
    countries = sorted({hh.country for hh in households})
    if args.country:
        countries = [c for c in countries if c == args.country]

    unit_centroids: dict[str, dict[str, tuple[float, float]]] = {}
    for level, assignment in levels.items():
        cents: dict[str, list] = {}
        for qk, unit in assignment.items():
            c = tile_center(parse_quadkey(qk))
            w = population.get(qk, 0.0)
            cents.setdefault(unit, []).append((c.lat, c.lon, w))
        unit_centroids[level] = {}
        for unit, pts in cents.items():
            ws = np.array([p[2] for p in pts])
            if ws.sum() == 0:
                ws = np.ones(len(pts))
            lats_u = np.array([p[0] for p in pts])
            lons_u = np.array([p[1] for p in pts])
            unit_centroids[level][unit] = (
                float(np.sum(lats_u * ws) / ws.sum()),
                float(np.sum(lons_u * ws) / ws.sum()),
            )

    reports = []
    for country in countries:
        hh_country = [hh for hh in households if hh.country == country]
        country_tiles = {qk for qk in estimates.quadkeys if tile_country.get(qk) == country}
        tile_rwi = {
            qk: float(estimates.rwi[i])
            for i, qk in enumerate(estimates.quadkeys)
            if qk in country_tiles
        }
        country_clusters = [c for c in labeled_clusters if c.country == country]
        for kind, arg in schemes:
            if kind == "ml_tiles":
                assignment = assign_ml_tiles(hh_country, tile_rwi)
            elif kind == "ml_units":
                level = arg or ADMIN_LEVELS[-1]
                if level not in levels:
                    raise InvalidInputError(f"admin level {level!r} not in {args.admin}")
                country_assignment = {
                    qk: unit for qk, unit in levels[level].items() if tile_country.get(qk) == country
                }
                result = aggregate_to_units(estimates, country_assignment, level=level)
                unit_values = {u: a.mean_rwi for u, a in result.units.items()}
                assignment = assign_ml_units(
                    hh_country, unit_values, country_assignment,
                    n_units_total=len(set(country_assignment.values())),
                )
                assignment.scheme = f"ml_units:{level}"
            elif kind in ("survey_units_exclude", "survey_units_impute"):
                level = arg or ADMIN_LEVELS[-1]
                if level not in levels:
                    raise InvalidInputError(f"admin level {level!r} not in {args.admin}")
                country_assignment = {
                    qk: unit for qk, unit in levels[level].items() if tile_country.get(qk) == country
                }
                unit_wealth_num: dict[str, float] = {}
                unit_wealth_den: dict[str, float] = {}
                for c in country_clusters:
                    qk = quadkey(latlon_to_tile(LatLon(c.lat, c.lon), ANALYSIS_ZOOM))
                    unit = country_assignment.get(qk)
                    if unit is None:
                        continue
                    size = float(cluster_size_of.get(c.cluster_id, 1))
                    unit_wealth_num[unit] = unit_wealth_num.get(unit, 0.0) + size * cluster_label_of[c.cluster_id]
                    unit_wealth_den[unit] = unit_wealth_den.get(unit, 0.0) + size
                unit_survey = {u: unit_wealth_num[u] / unit_wealth_den[u] for u in unit_wealth_num}
                assignment = assign_survey_units(
                    hh_country, unit_survey, country_assignment,
                    n_units_total=len(set(country_assignment.values())),
                    impute=kind.endswith("impute"),
                    unit_centroids=unit_centroids[level],
                )
                assignment.scheme = f"{kind}:{level}"
            elif kind == "knn":
                k = int(arg or "1")
                assignment = assign_knn_clusters(
                    hh_country,
                    [c.lat for c in country_clusters],
                    [c.lon for c in country_clusters],
                    [cluster_label_of[c.cluster_id] for c in country_clusters],
                    k=k,
                )
            else:
                raise InvalidInputError(f"unknown scheme {kind!r}")
            reports.append(run_scheme(hh_country, assignment, budgets=budgets, seed=args.seed, country=country))
    header, rows = emit_table(reports, budgets=budgets)
    csvio.write_csv(_out(args, "targeting_report.csv"), header, rows, manifest)
    figures.targeting_figure(header, rows, _out(args, "targeting_report.png"))
    print(f"target: {len(reports)} scheme runs -> {_out(args, 'targeting_report.csv')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wealthmap", description="Micro-regional wealth estimation pipeline"
    )
    parser.add_argument("--version", action="version", version=f"wealthmap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-o", "--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    p = sub.add_parser("synth", help="generate a synthetic input world")
    common(p)
    p.add_argument("--countries", type=int, default=3)
    p.add_argument("--tiles", type=int, default=400, help="tiles per country")
    p.add_argument("--clusters", type=int, default=120, help="survey clusters per country")
    p.add_argument("--households", type=int, default=6, help="households per cluster")
    p.add_argument("--target-households", type=int, default=300)
    p.add_argument("--feature-noise", type=float, default=0.0)
    p.add_argument("--label-noise", type=float, default=0.0)
    p.add_argument("--spatial-noise", type=float, default=0.0)
    p.add_argument("--household-noise", type=float, default=0.0)
    p.add_argument("--urban-share", type=float, default=0.4)
    p.add_argument("--jitter-scale", type=float, default=1.0)
    p.add_argument("--landscape-mix", type=float, default=0.3)
    p.add_argument("--population-mu", type=float, default=4.0)
    p.add_argument("--population-sigma", type=float, default=1.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="normalize features and build the training table")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--population", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--households", required=True)
    p.add_argument("--weighted-labels", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit the boosted-tree model")
    common(p)
    p.add_argument("--training", required=True)
    p.add_argument("--norm-stats", required=True)
    p.add_argument("--tune", choices=["none"] + list(PROTOCOLS), default="none")
    p.add_argument("--k", type=int, default=5)
    _add_params_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="cross-validation and importance reports")
    common(p)
    p.add_argument("--training", required=True)
    p.add_argument("--protocol", choices=["all"] + list(PROTOCOLS), default="all")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--matrix", action="store_true", help="emit the cross-country R^2 matrix")
    _add_params_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="per-tile estimates from a trained model")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--population", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("aggregate", help="privacy aggregation and admin validation")
    common(p)
    p.add_argument("--rwi", required=True)
    p.add_argument("--threshold", type=float, default=PRIVACY_POPULATION_THRESHOLD)
    p.add_argument("--cap-zoom", type=int, default=AGGREGATION_ZOOM_CAP)
    p.add_argument("--admin", help="quadkey->unit assignment table")
    p.add_argument("--truth", help="unit-level ground truth for validation")
    p.add_argument("--geojson", action="store_true")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("awe", help="absolute wealth conversion")
    common(p)
    p.add_argument("--rwi", required=True)
    p.add_argument("--features", required=True, help="feature table (for tile->country mapping)")
    p.add_argument("--stats", required=True, help="country_stats.csv")
    p.add_argument("--mode", choices=["icdf", "literal"], default="icdf")
    p.add_argument("--bins", type=int, default=60)
    p.set_defaults(func=cmd_awe)

    p = sub.add_parser("error", help="error model and per-tile expected error")
    common(p)
    p.add_argument("--training", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--population", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--attributes", required=True, help="country_attributes.csv")
    p.add_argument("--rwi", required=True)
    p.add_argument("--protocol", choices=list(PROTOCOLS), default="basic_kfold")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--specification", choices=list(SPECIFICATIONS), default="base")
    p.add_argument("--dissimilarity", action="store_true")
    _add_params_flags(p)
    p.set_defaults(func=cmd_error)

    p = sub.add_parser("target", help="budget-constrained targeting simulations")
    common(p)
    p.add_argument("--households", required=True, help="target_households.csv")
    p.add_argument("--rwi", required=True)
    p.add_argument("--admin", required=True)
    p.add_argument("--population", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--training", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--country", default="")
    p.add_argument("--budgets", default=",".join(str(b) for b in DEFAULT_BUDGETS))
    p.add_argument(
        "--schemes",
        default="ml_tiles,ml_units:admin2,survey_units_exclude:admin2,survey_units_impute:admin2,knn:1,knn:5",
    )
    p.set_defaults(func=cmd_target)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (WealthmapError, OSError) as e:
        print(f"wealthmap {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
