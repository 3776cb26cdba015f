from repository.ids import short_id
from repository.testing import ADMIN, WorkflowTestCase, copy_inputs, read_tree, write_tree
from workflows.daemon import Daemon
from workflows.models import RunState, TriggerKind

RAW_FILES = {
    'images/0.bin': bytes(range(256)) * 8,
    'images/1.bin': b'\x00\xff' * 1024,
    'labels.csv': b'image,label\n0,cat\n1,dog\n',
}


def ingest(context):
    write_tree(context.outputs_dir, RAW_FILES)


def relabel(context):
    copy_inputs(context)
    labels = context.outputs_dir / 'labels.csv'
    labels.write_bytes(labels.read_bytes().replace(b'1,dog', b'1,wolf'))


class LabelingPipelineTests(WorkflowTestCase):
    """Ingest, explore, snapshot for labeling, then relabel on every new snapshot."""

    def setUp(self):
        super().setUp()
        self.engine, self.runner = self.make_engine({'ingest': ingest, 'relabel': relabel})
        self.engine.register_workflow(ADMIN, {
            'name': 'ingest-raw',
            'steps': [{'id': 'ingest', 'kind': 'program', 'argv': ['ingest'], 'terminal': True}],
            'output': {'dataset': 'raw'},
        })
        self.engine.register_workflow(ADMIN, {
            'name': 'snapshot',
            'steps': [{
                'id': 'copy', 'kind': 'program', 'argv': ['copy'], 'terminal': True,
                'input': {'query': {'dataset': 'raw', 'head_only': True}},
            }],
            'output': {'dataset': 'labeling', 'tags': ['for-labeling']},
        })
        self.engine.register_workflow(ADMIN, {
            'name': 'relabel',
            'steps': [{'id': 'relabel', 'kind': 'program', 'argv': ['relabel'], 'input': {'trigger': True}, 'terminal': True}],
            'triggers': [{'kind': 'event', 'query': {'dataset': 'labeling'}}],
            'output': {'dataset': 'labeled'},
        })

    def test_pipeline(self):
        ingested = self.engine.run_workflow(ADMIN, 'ingest-raw')
        self.assertEqual(ingested.state, RunState.SUCCEEDED)

        scratch = self.path('scratch')
        code, _, stderr = self.dsr('checkout', '--query', 'dataset=raw head=true', str(scratch))
        self.assertEqual((code, stderr), (0, ''))
        self.assertEqual(read_tree(scratch), RAW_FILES)

        snapshot = self.engine.run_workflow(ADMIN, 'snapshot')
        self.assertEqual(snapshot.state, RunState.SUCCEEDED)
        self.assertEqual(self.datasets.tags()['for-labeling'], snapshot.output_commit)

        daemon = Daemon(self.repo, engine=self.engine)
        (relabeled,) = daemon.run_once()
        self.assertEqual(relabeled.state, RunState.SUCCEEDED)
        self.assertEqual(relabeled.cause.kind, TriggerKind.EVENT)
        self.assertEqual(relabeled.cause.commit_id, snapshot.output_commit)
        self.assertEqual(daemon.run_once(), [])
        self.assertEqual(len(self.engine.runs(workflow='relabel')), 1)

        code, stdout, _ = self.dsr('diff', 'labeling', 'labeled')
        self.assertEqual((code, stdout), (0, 'M labels.csv\n0 added, 0 deleted, 1 modified, 2 unchanged\n'))

        code, stdout, _ = self.dsr('lineage', 'labeled', '--up')
        self.assertEqual(code, 0)
        self.assertIn(short_id(ingested.output_commit), stdout)
        self.assertIn(f'via relabel run {relabeled.run_id}', stdout)
        self.assertEqual(self.runner.step_ids(), ['ingest', 'copy', 'relabel'])
