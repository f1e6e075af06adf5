"""
CAS检测流水线主入口
    python main.py <synth|train|predict|evaluate|benchmark|report> [参数]
退出码: 0 成功, 1 参数错误, 2 数据错误, 3 数值错误
"""

import argparse
import os
import sys

from casdetect import create_app, __version__
from casdetect.api import register_commands
from casdetect.utils.exceptions import CasError, UsageError
from casdetect.utils.logger import get_logger
from casdetect.utils.response import error_response


class CliParser(argparse.ArgumentParser):
    """参数错误按用法错误处理（退出码1），不走argparse默认的退出码2"""

    def error(self, message):
        raise UsageError(message, prog=self.prog)


def build_parser():
    parser = CliParser(prog='casdetect', description='肺音连续性附加音(CAS)检测流水线')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('--env', choices=['development', 'testing', 'production'],
                        default=os.getenv('CAS_ENV'), help='运行环境，默认读取CAS_ENV')
    subparsers = parser.add_subparsers(dest='command', metavar='command', parser_class=CliParser)
    subparsers.required = True
    register_commands(subparsers)
    return parser


def main(argv=None):
    """
    解析参数并执行子命令

    返回:
        退出码
    """
    try:
        args = build_parser().parse_args(argv)
        config = create_app(args.env)
        return args.handler(args, config)
    except CasError as e:
        get_logger('casdetect').error(f"{e.__class__.__name__}: {e.message}")
        return error_response(e.exit_code, e.message, e.to_dict())
    except (ArithmeticError, FloatingPointError) as e:
        get_logger('casdetect').error(f"数值异常: {e}", exc_info=True)
        return error_response(3, str(e))
    except OSError as e:
        get_logger('casdetect').error(f"文件错误: {e}")
        return error_response(2, str(e))
    except Exception as e:
        get_logger('casdetect').error(f"未处理的异常: {e}", exc_info=True)
        return error_response(2, str(e))


if __name__ == '__main__':
    sys.exit(main())
