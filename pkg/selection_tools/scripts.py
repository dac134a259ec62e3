'''Pipeline commands: gen-data, run, ablate and report.

Every command writes under its own directory inside the configured output
directory (data/<data id>, runs/<run id>, ablations/<run id>, <results>/report)
and never touches another command's files. Result files are written to a
temporary file first and renamed into place.
'''
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .baselines import RankingInputs, rank_with
from .datagen import Role, ShiftSpec, corrupt, gen_source, ingest_idx
from .datagen import from_bytes as dataset_from_bytes
from .datagen import to_bytes as dataset_to_bytes
from .errors import DegenerateException, OutputException, SelectionException
from .evaluation import (MisclassificationOracle, Ranking, budget_count, curve_rows,
                         summarize, trc, wilcoxon_signed_rank)
from .features import extract_batch, write_feature_csv
from .metasel import Variant, build_training_set, rank_targets, train_metamodel
from .models import Classifier, finetune, finetune_split, train
from .models import from_bytes as model_from_bytes
from .models import to_bytes as model_to_bytes
from .odin import calibrate_model

logger = logging.getLogger(__name__)

CANDIDATE = 'metasel'
ABLATION_BUDGETS = (0.01, 0.03, 0.05, 0.10)
FAILED_MARKER = 'FAILED'


def _ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as err:
        raise OutputException("cannot create output directory {}: {}".format(path, err))


def _atomic_write(path, payload):
    directory = os.path.dirname(path) or '.'
    _ensure_dir(directory)
    if isinstance(payload, str):
        payload = payload.encode('utf-8')
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-')
        with os.fdopen(fd, 'wb') as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as err:
        if tmp and os.path.exists(tmp):
            os.remove(tmp)
        raise OutputException("cannot write {}: {}".format(path, err))


def write_frame(frame, path):
    _atomic_write(path, frame.to_csv(index=False))


def write_json(values, path):
    _atomic_write(path, json.dumps(values, indent=2, sort_keys=True) + '\n')


def data_directory(config):
    return os.path.join(config.output_dir, 'data', config.data_id)


def run_directory(config):
    return os.path.join(config.output_dir, 'runs', config.run_id)


def ablation_directory(config):
    return os.path.join(config.output_dir, 'ablations', config.run_id)


def _target_file(corruption, severity, split):
    return '{}_{}_{}.msds'.format(corruption, severity, split)


def _source_datasets(config):
    spec = config.dataset
    if spec.idx:
        logger.info('Ingesting IDX source data...')
        train = ingest_idx(spec.idx['train_images'], spec.idx['train_labels'], Role.SOURCE_TRAIN, spec.num_classes)
        test = ingest_idx(spec.idx['test_images'], spec.idx['test_labels'], Role.SOURCE_TEST, spec.num_classes)
    else:
        train = gen_source(spec.num_classes, spec.train_per_class, config.seed, Role.SOURCE_TRAIN)
        test = gen_source(spec.num_classes, spec.test_per_class, config.seed + 1, Role.SOURCE_TEST)
    return train, test


def cmd_gen_data(config):
    '''
    Writes the source splits and, per (corruption, severity), a corrupted copy of
    each: target training data from the source training images, target test data
    from the source test images, with independent corruption draws.
    args:
        config: ExperimentConfig.
    returns:
        the data directory. Reruns with the same seed produce identical files.
    '''
    directory = data_directory(config)
    _ensure_dir(directory)
    logger.info('Generating data in %s', directory)

    train, test = _source_datasets(config)
    datasets = {'source_train.msds': train, 'source_test.msds': test}
    for corruption, severity in config.shifts.cells():
        datasets[_target_file(corruption, severity, 'train')] = corrupt(
            train, ShiftSpec(corruption, severity, config.seed), Role.TARGET_TRAIN)
        datasets[_target_file(corruption, severity, 'test')] = corrupt(
            test, ShiftSpec(corruption, severity, config.seed + 1), Role.TARGET_TEST)

    files = {}
    for name, d in sorted(datasets.items()):
        _atomic_write(os.path.join(directory, name), dataset_to_bytes(d))
        files[name] = {'count': len(d), 'role': d.role.value}
    write_json({'data_id': config.data_id, 'seed': config.seed, 'files': files},
               os.path.join(directory, 'manifest.json'))
    logger.info('Wrote %d datasets (%d target variants)', len(datasets), len(config.shifts.cells()))
    return directory


def _load(directory, name, role):
    path = os.path.join(directory, name)
    with open(path, 'rb') as fh:
        return dataset_from_bytes(fh.read(), role)


def load_data(config):
    '''Reads the dataset cache, generating it first when absent.'''
    directory = data_directory(config)
    if not os.path.exists(os.path.join(directory, 'manifest.json')):
        cmd_gen_data(config)
    source_train = _load(directory, 'source_train.msds', Role.SOURCE_TRAIN)
    source_test = _load(directory, 'source_test.msds', Role.SOURCE_TEST)
    targets = {}
    for corruption, severity in config.shifts.cells():
        targets[(corruption, severity)] = (
            _load(directory, _target_file(corruption, severity, 'train'), Role.TARGET_TRAIN),
            _load(directory, _target_file(corruption, severity, 'test'), Role.TARGET_TEST),
        )
    return source_train, source_test, targets


@dataclass
class Subject:
    '''A fine-tuned model with its labeled target sample and unlabeled target test set.'''
    name: str
    corruption: str
    severity: int
    model: Classifier
    sample: object
    test: object
    calibration: object
    oracle: MisclassificationOracle
    report: object


def _reject(name, corruption, severity, reason, report):
    return {
        'subject': name, 'corruption': corruption, 'severity': severity, 'reason': reason,
        'acc_pretrained': report.acc_pretrained_on_target, 'acc_finetuned': report.acc_finetuned_on_target,
        'acc_scratch': report.acc_scratch_on_target, 'n_s': report.n_s,
    }


def prepare_subject(config, m_s, corruption, severity, target_train, target_test):
    '''Fine-tunes the source model for one shift, checks admissibility and calibrates ODIN.
    returns:
        tuple (Subject or None, rejection row or None)
    '''
    name = config.subject_name(corruption, severity)
    m_t, report = finetune(m_s, target_train, config.n_s, config.finetune)
    if not report.admissible:
        logger.warning('Rejecting %s: fine-tuning is not admissible', name)
        return None, _reject(name, corruption, severity, 'inadmissible', report)

    sample, validation = finetune_split(target_train, config.n_s, config.finetune.seed)
    calibration = calibrate_model(m_t, validation, config.odin, config.seed)
    predicted = m_t.outputs(target_test.inputs).predicted
    oracle = MisclassificationOracle.from_predictions(target_test.ids, predicted, target_test.labels)
    if oracle.total == 0:
        logger.warning('Rejecting %s: no misclassified test inputs', name)
        return None, _reject(name, corruption, severity, 'no_misclassified', report)

    logger.info('Admitted %s: %d of %d test inputs misclassified', name, oracle.total, len(target_test))
    return Subject(name, corruption, severity, m_t, sample, target_test, calibration, oracle, report), None


def _source_model(config, source_train, run_dir=None):
    path = os.path.join(run_dir, 'models', 'source.msel') if run_dir else None
    if path and os.path.exists(path):
        with open(path, 'rb') as fh:
            return model_from_bytes(fh.read())
    logger.info('Training source model %s on %d inputs', config.arch, len(source_train))
    return train(config.arch, source_train, config.source_train)


def ensemble_members(config, source_train):
    '''Source-trained members for the ensemble baseline, one seed each.'''
    return [train(config.arch, source_train, config.source_train.with_seed(config.seed + 1000 * (i + 1)))
            for i in range(config.ensemble.n_ensembles)]


def prepare_subjects(config, m_s, targets, workers):
    cells = sorted(targets)
    results = Parallel(n_jobs=workers)(
        delayed(prepare_subject)(config, m_s, c, s, *targets[(c, s)]) for c, s in cells)
    subjects = [s for s, _ in results if s is not None]
    rejects = [r for _, r in results if r is not None]
    return subjects, rejects


def ranking_inputs(config, subject, members=None):
    test_out = subject.model.outputs(subject.test.inputs)
    train_out = subject.model.outputs(subject.sample.inputs)
    ensemble = None
    if members is not None:
        ensemble = {
            'mut': subject.model, 'target_train': subject.sample, 'target_test': subject.test,
            'n_ensembles': config.ensemble.n_ensembles, 'seed': config.seed, 'members': members,
            'fit_data': subject.sample, 'cfg': config.finetune,
        }
    return RankingInputs(
        test_ids=subject.test.ids,
        test_probs=test_out.probs,
        test_predicted=test_out.predicted,
        test_traces=test_out.traces,
        train_traces=train_out.traces,
        train_labels=subject.sample.labels,
        train_predicted=train_out.predicted,
        num_classes=subject.model.num_classes,
        subject=subject.name,
        nns_k=config.nns.k,
        nns_alpha=config.nns.alpha,
        nns_metric=config.nns.metric,
        base_metric=config.base_metric,
        datis_k=config.datis.k,
        datis_tau=config.datis.tau,
        ensemble=ensemble,
    )


def _meta_kwargs(config):
    meta = config.meta
    return {'patience': meta.patience, 'validation_fraction': meta.validation_fraction,
            'kernels': meta.kernels, 'kernel_width': meta.kernel_width, 'hidden': meta.hidden}


def run_method(config, method, subject, m_s, source_test, members=None):
    '''One ranking task.
    returns:
        tuple (Ranking, seconds, MetaSel training records or None, MetaModel or None)
    '''
    start = time.perf_counter()
    records, mm = None, None
    if method == CANDIDATE:
        records = build_training_set(subject.sample, source_test, m_s, subject.model, config.odin,
                                     subject.calibration)
        mm = train_metamodel(records, Variant.FULL, config.meta.train_config(config.seed), **_meta_kwargs(config))
        mm.odin_config, mm.threshold = config.odin, subject.calibration.threshold
        ranking = rank_targets(mm, subject.test, m_s, subject.model, config.odin, subject.name)
    else:
        ranking = rank_with(method, ranking_inputs(config, subject, members if method == 'ensemble' else None))
    seconds = time.perf_counter() - start
    logger.info('Ranked %s with %s in %.2fs', subject.name, method, seconds)
    return ranking, seconds, records, mm


def _save_metamodel(mm, path):
    _ensure_dir(os.path.dirname(path))
    try:
        mm.save(path)
    except OSError as err:
        raise OutputException("cannot write {}: {}".format(path, err))


def rank_task(config, run_dir, method, subject, m_s, source_test, members=None):
    '''Ranks one subject with one method and writes the ranking (for MetaSel also its
    features and meta-model) as soon as it is done.
    returns:
        tuple (curve rows, timing row), or (None, failure row) when the method
        cannot rank this subject.
    '''
    try:
        ranking, seconds, records, mm = run_method(config, method, subject, m_s, source_test, members)
    except (SelectionException, ValueError, ArithmeticError) as err:
        logger.error('%s could not rank %s: %s', method, subject.name, err)
        return None, {'subject': subject.name, 'method': method, 'error': '{}: {}'.format(type(err).__name__, err)}

    write_frame(ranking.to_frame(), os.path.join(run_dir, 'rankings', subject.name, method + '.csv'))
    if records is not None:
        _write_features(records, os.path.join(run_dir, 'features', subject.name + '.csv'))
    if mm is not None:
        _save_metamodel(mm, os.path.join(run_dir, 'metamodels', subject.name + '.msel'))
    rows = curve_rows(ranking, subject.oracle, config.budgets, subject.corruption, subject.severity)
    return rows, {'subject': subject.name, 'method': method, 'seconds': seconds}


def _save_model(m, path):
    _atomic_write(path, model_to_bytes(m))


def _rejects_frame(rejects):
    columns = ['subject', 'corruption', 'severity', 'reason', 'acc_pretrained', 'acc_finetuned', 'acc_scratch', 'n_s']
    return pd.DataFrame(rejects, columns=columns).sort_values('subject').reset_index(drop=True)


def summarizable(curves, candidate=CANDIDATE):
    '''Curves of the subjects the candidate ranked, kept only for the methods that
    ranked every one of them.'''
    subjects = set(curves.loc[curves['method'] == candidate, 'subject'])
    kept = curves[curves['subject'].isin(subjects)]
    counts = kept.groupby('method')['subject'].nunique()
    return kept[kept['method'].isin(counts[counts == len(subjects)].index)]


def cmd_run(config, workers=1):
    '''
    Runs the whole pipeline for every (corruption, severity) subject: trains the source model once,
    fine-tunes and admits subjects, calibrates ODIN, ranks each subject's test set
    with every configured method and evaluates the rankings.
    A (subject, method) pair that cannot be ranked goes to failures.csv and the run
    goes on; the manifest status is then "partial".
    args:
        config: ExperimentConfig.
        workers: size of the worker pool shared by subject and (subject x method) tasks.
    returns:
        the run directory. On failure a FAILED marker holding the error is left there
        next to whatever was already written.
    '''
    run_dir = run_directory(config)
    _ensure_dir(run_dir)
    marker = os.path.join(run_dir, FAILED_MARKER)
    if os.path.exists(marker):
        os.remove(marker)
    try:
        _run(config, run_dir, workers)
    except Exception as err:
        _atomic_write(marker, '{}: {}\n'.format(type(err).__name__, err))
        logger.error('Run %s failed: %s', config.run_id, err)
        raise
    return run_dir


def _run(config, run_dir, workers):
    logger.info('Starting run %s with %d worker(s)', config.run_id, workers)
    source_train, source_test, targets = load_data(config)

    m_s = _source_model(config, source_train)
    _save_model(m_s, os.path.join(run_dir, 'models', 'source.msel'))
    members = ensemble_members(config, source_train) if 'ensemble' in config.methods else None

    subjects, rejects = prepare_subjects(config, m_s, targets, workers)
    write_frame(_rejects_frame(rejects), os.path.join(run_dir, 'rejects.csv'))
    write_frame(pd.DataFrame(
        [{'subject': s.name, 'threshold': s.calibration.threshold, 'achieved_tpr': s.calibration.achieved_tpr,
          'achieved_fpr': s.calibration.achieved_fpr} for s in subjects],
        columns=['subject', 'threshold', 'achieved_tpr', 'achieved_fpr']), os.path.join(run_dir, 'calibration.csv'))
    for s in subjects:
        _save_model(s.model, os.path.join(run_dir, 'models', s.name + '.msel'))

    results = Parallel(n_jobs=workers)(
        delayed(rank_task)(config, run_dir, method, s, m_s, source_test, members)
        for s in subjects for method in config.methods)
    curves = [rows for rows, _ in results if rows is not None]
    timings = [row for rows, row in results if rows is not None]
    failures = [row for rows, row in results if rows is None]
    write_frame(pd.DataFrame(failures, columns=['subject', 'method', 'error']), os.path.join(run_dir, 'failures.csv'))

    columns = ['subject', 'method', 'severity', 'corruption', 'budget_pct', 'budget_count', 'trc', 'apfd']
    curves = pd.concat(curves, ignore_index=True) if curves else pd.DataFrame(columns=columns)
    curves = curves.sort_values(['subject', 'method', 'budget_pct']).reset_index(drop=True)
    write_frame(curves, os.path.join(run_dir, 'curves.csv'))
    write_frame(pd.DataFrame(timings, columns=['subject', 'method', 'seconds']), os.path.join(run_dir, 'timings.csv'))

    complete = summarizable(curves)
    summarized = complete['method'].nunique() > 1
    if summarized:
        tables = summarize(complete, CANDIDATE)
        write_frame(tables['summary'], os.path.join(run_dir, 'summary.csv'))
        write_frame(tables['distribution'], os.path.join(run_dir, 'distribution.csv'))
    else:
        logger.warning('No summary for run %s: needs admitted subjects, %s and another method',
                       config.run_id, CANDIDATE)

    write_json({
        'run_id': config.run_id,
        'data_id': config.data_id,
        'config': config.to_dict(),
        'subjects': [s.name for s in subjects],
        'rejected': [r['subject'] for r in rejects],
        'methods': list(config.methods),
        'summary': summarized,
        'failed_tasks': [[f['subject'], f['method']] for f in failures],
        'status': 'partial' if failures else 'complete',
    }, os.path.join(run_dir, 'manifest.json'))
    logger.info('Run %s complete: %d subjects admitted, %d rejected, %d failed tasks', config.run_id,
                len(subjects), len(rejects), len(failures))


def _write_features(records, path):
    _ensure_dir(os.path.dirname(path))
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), prefix='.tmp-')
    os.close(fd)
    try:
        write_feature_csv(records, tmp)
        os.replace(tmp, path)
    except OSError as err:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise OutputException("cannot write {}: {}".format(path, err))


def _ablate_subject(config, subject, variant, records, test_records, model_dir):
    mm = train_metamodel(records, variant, config.meta.train_config(config.seed), **_meta_kwargs(config))
    mm.odin_config, mm.threshold = config.odin, subject.calibration.threshold
    _save_metamodel(mm, os.path.join(model_dir, variant.value + '.msel'))
    ranking = Ranking.from_scores(subject.test.ids, mm.score_batch(test_records), variant.value, subject.name)
    rows = []
    for fraction in ABLATION_BUDGETS:
        b = budget_count(fraction, len(ranking))
        rows.append({
            'subject': subject.name, 'corruption': subject.corruption, 'severity': subject.severity,
            'variant': variant.value, 'reference': variant == Variant.FULL,
            'input_width': mm.input_width, 'budget_pct': round(fraction * 100, 6), 'budget_count': b,
            'trc': trc(ranking, subject.oracle, b),
        })
    return rows


def cmd_ablate(config, workers=1):
    '''
    Trains FULL and V1..V7 on every admitted subject and reports TRC at the 1, 3, 5
    and 10% budgets. Reuses the run's source model when `run` has completed for this
    config; the rest of the pipeline is recomputed deterministically.
    returns:
        the ablation directory.
    '''
    out_dir = ablation_directory(config)
    _ensure_dir(out_dir)
    source_train, source_test, targets = load_data(config)
    run_dir = run_directory(config)
    m_s = _source_model(config, source_train, run_dir if os.path.isdir(run_dir) else None)
    subjects, rejects = prepare_subjects(config, m_s, targets, workers)
    write_frame(_rejects_frame(rejects), os.path.join(out_dir, 'rejects.csv'))

    prepared = []
    for s in subjects:
        records = build_training_set(s.sample, source_test, m_s, s.model, config.odin, s.calibration)
        test_records = extract_batch(m_s, s.model, s.test, config.odin, labeled=False)
        prepared.append((s, records, test_records))

    tasks = [(s, records, test_records, variant) for s, records, test_records in prepared for variant in Variant]
    results = Parallel(n_jobs=workers)(
        delayed(_ablate_subject)(config, s, variant, records, test_records,
                                 os.path.join(out_dir, 'metamodels', s.name))
        for s, records, test_records, variant in tasks)

    columns = ['subject', 'corruption', 'severity', 'variant', 'reference', 'input_width',
               'budget_pct', 'budget_count', 'trc']
    rows = pd.DataFrame([row for chunk in results for row in chunk], columns=columns)
    rows = rows.sort_values(['subject', 'variant', 'budget_pct']).reset_index(drop=True)
    write_frame(rows, os.path.join(out_dir, 'ablation.csv'))
    write_frame(ablation_summary(rows), os.path.join(out_dir, 'ablation_summary.csv'))
    logger.info('Ablation over %d subjects written to %s', len(subjects), out_dir)
    return out_dir


def ablation_summary(rows):
    '''TRC median and quartiles per (variant, budget), FULL flagged as the reference.'''
    grouped = rows.groupby(['variant', 'budget_pct'])['trc']
    summary = pd.DataFrame({
        'median': grouped.median(),
        'q1': grouped.quantile(0.25),
        'q3': grouped.quantile(0.75),
        'count': grouped.count(),
    }).reset_index()
    summary.insert(1, 'reference', summary['variant'] == Variant.FULL.value)
    return summary


def _collect(results_dir, name):
    direct = os.path.join(results_dir, name)
    if os.path.exists(direct):
        paths = [direct]
    else:
        runs = os.path.join(results_dir, 'runs')
        paths = sorted(os.path.join(runs, r, name) for r in (os.listdir(runs) if os.path.isdir(runs) else []))
        paths = [p for p in paths if os.path.exists(p)]
    frames = [pd.read_csv(p) for p in paths]
    frames = [f for f in frames if len(f)]
    return pd.concat(frames, ignore_index=True) if frames else None


def wilcoxon_table(summary, candidate=CANDIDATE):
    '''Two-sided and "candidate greater" p-values of the candidate against every
    baseline over the pooled (subject, budget) TRC pairs.'''
    rows = []
    baselines = sorted(c[len('trc_'):] for c in summary.columns
                       if c.startswith('trc_') and c != 'trc_' + candidate)
    for baseline in baselines:
        pairs = list(zip(summary['trc_' + candidate], summary['trc_' + baseline]))
        try:
            two_sided = wilcoxon_signed_rank(pairs)
            greater = wilcoxon_signed_rank(pairs, alternative='greater')
            statistic, p_two, p_greater = two_sided.statistic, two_sided.pvalue, greater.pvalue
        except DegenerateException as err:
            logger.warning('Wilcoxon %s vs %s: %s', candidate, baseline, err)
            statistic, p_two, p_greater = float('nan'), float('nan'), float('nan')
        rows.append({'baseline': baseline, 'n_pairs': len(pairs), 'statistic': statistic,
                     'p_two_sided': p_two, 'p_greater': p_greater})
    return pd.DataFrame(rows, columns=['baseline', 'n_pairs', 'statistic', 'p_two_sided', 'p_greater'])


def severity_table(summary, candidate=CANDIDATE):
    grouped = summary.groupby(['severity', 'budget_pct'])
    return pd.DataFrame({
        'median_improvement_pct': grouped['improvement_pct'].median(),
        'median_trc_' + candidate: grouped['trc_' + candidate].median(),
        'subjects': grouped['subject'].nunique(),
    }).reset_index()


def cmd_report(results_dir, budgets=None):
    '''
    Consolidates the curves of one run directory (or of every run under an output
    directory) into report/consolidated.csv, wilcoxon.csv, severity.csv, timings.csv
    and summary.txt. Needs only the CSVs.
    args:
        results_dir: a run directory or an output directory holding runs/.
        budgets: optional budget fractions to keep.
    returns:
        dict of the report DataFrames.
    '''
    if not os.path.isdir(results_dir):
        raise OutputException("results directory {} does not exist".format(results_dir))
    curves = _collect(results_dir, 'curves.csv')
    if curves is None:
        raise OutputException("no completed run with curves under {}".format(results_dir))
    if budgets is not None:
        wanted = {round(b * 100, 6) for b in budgets}
        curves = curves[curves['budget_pct'].round(6).isin(wanted)]
        if curves.empty:
            raise OutputException("no curve rows at budgets {}".format(sorted(wanted)))

    curves = summarizable(curves)
    if curves['method'].nunique() < 2:
        raise OutputException("no subject under {} was ranked by {} and another method".format(results_dir, CANDIDATE))
    tables = summarize(curves, CANDIDATE)
    report = {
        'consolidated': tables['summary'],
        'distribution': tables['distribution'],
        'wilcoxon': wilcoxon_table(tables['summary']),
        'severity': severity_table(tables['summary']),
    }
    timings = _collect(results_dir, 'timings.csv')
    if timings is not None:
        report['timings'] = timings.groupby('method')['seconds'].median().rename('median_seconds').reset_index()

    out_dir = os.path.join(results_dir, 'report')
    for name, frame in report.items():
        write_frame(frame, os.path.join(out_dir, name + '.csv'))
    _atomic_write(os.path.join(out_dir, 'summary.txt'), _summary_text(report))
    logger.info('Report written to %s', out_dir)
    return report


def _summary_text(report):
    consolidated = report['consolidated']
    lines = [
        'subjects: {}'.format(consolidated['subject'].nunique()),
        'budgets (%): {}'.format(', '.join('{:g}'.format(b) for b in sorted(consolidated['budget_pct'].unique()))),
        'median improvement of {} over the best baseline: {:.2f}%'.format(
            CANDIDATE, float(np.nanmedian(consolidated['improvement_pct']))),
        '',
        'Wilcoxon signed-rank, {} vs baseline:'.format(CANDIDATE),
    ]
    for _, row in report['wilcoxon'].iterrows():
        lines.append('  {:<10} n={:<4} p(two-sided)={:.4g} p(greater)={:.4g}'.format(
            row['baseline'], int(row['n_pairs']), row['p_two_sided'], row['p_greater']))
    if 'timings' in report:
        lines += ['', 'median ranking time (s):']
        for _, row in report['timings'].iterrows():
            lines.append('  {:<10} {:.3f}'.format(row['method'], row['median_seconds']))
    return '\n'.join(lines) + '\n'
