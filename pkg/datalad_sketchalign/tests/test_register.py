from datalad.tests.utils_pytest import assert_true

from .. import command_suite


def test_register():
    import datalad.api as da
    for cmd in ('solve', 'render', 'datagen', 'stats', 'pretrain', 'sft',
                'align', 'eval'):
        assert_true(hasattr(da, f'sketchalign_{cmd}'))
    assert_true(all(spec[3].startswith('sketchalign_')
                    for spec in command_suite[1]))
