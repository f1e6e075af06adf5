"""
CLI命令模块
每个子命令一个模块，register_commands 把它们挂到argparse上
"""


def register_commands(subparsers):
    """
    注册所有子命令

    参数:
        subparsers: argparse的子命令集合
    """
    from casdetect.api.synth import register as register_synth
    from casdetect.api.train import register as register_train
    from casdetect.api.predict import register as register_predict
    from casdetect.api.evaluate import register as register_evaluate
    from casdetect.api.benchmark import register as register_benchmark
    from casdetect.api.report import register as register_report

    for register in (register_synth, register_train, register_predict, register_evaluate,
                     register_benchmark, register_report):
        register(subparsers)
