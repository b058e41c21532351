from flask import Flask, request, jsonify
import logging
import traceback
import uuid
import io

from emlasso.cli import FitRequest, parse_truncation, run_fit
from emlasso.errors import NumericalError, PipelineError, ValidationError
from emlasso.tabular import load_csv

app = Flask(__name__)

# Set up logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

uploaded_files = {}


def _error(message, status):
    return jsonify({'error': message}), status


def _parse_request(file_id, body):
    """Map a JSON body onto the same FitRequest the command line builds."""
    em = body.get('em', [])
    if isinstance(em, str):
        em = [e.strip() for e in em.split(',') if e.strip()]
    trunc = body.get('trunc')
    if trunc is not None and not isinstance(trunc, (list, tuple)):
        trunc = [trunc]
    try:
        return FitRequest(
            data=file_id,
            treatment=str(body.get('treatment', 'A')),
            outcome=str(body.get('outcome', 'Y')),
            em=list(em),
            q_model=str(body.get('q_model', 'hal')),
            g_model=str(body.get('g_model', 'hal')),
            truncation=parse_truncation([float(t) for t in trunc] if trunc else None),
            alpha=float(body.get('alpha', 0.05)),
            gamma=float(body.get('gamma', 1.0)),
            folds=int(body.get('folds', 10)),
            seed=int(body.get('seed', 0)),
            hal_order=int(body.get('hal_order', 3)),
            naive=bool(body.get('naive', False)),
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, ValidationError):
            raise
        raise ValidationError(f"Malformed fit request: {e}")


@app.route('/api/upload', methods=['POST'])
def upload():
    """Upload CSV file and return file_id for fitting."""
    try:
        if 'file' not in request.files:
            return _error('No file uploaded', 400)

        file = request.files['file']
        if file.filename == '':
            return _error('No file selected', 400)

        if not file.filename.endswith('.csv'):
            return _error('File must be CSV', 400)

        file_id = str(uuid.uuid4())
        uploaded_files[file_id] = file.read()

        logger.info(f"File uploaded with ID: {file_id}")
        return jsonify({'file_id': file_id}), 200

    except Exception as e:
        logger.error(f"Error during upload: {str(e)}")
        return jsonify({'error': 'Internal server error', 'details': str(e)}), 500


@app.route('/api/fit/<file_id>', methods=['POST'])
def fit(file_id):
    """Run effect-modifier selection on an uploaded dataset."""
    if file_id not in uploaded_files:
        return _error('File not found', 404)
    try:
        fit_request = _parse_request(file_id, request.get_json(silent=True) or {})
        table = load_csv(io.BytesIO(uploaded_files[file_id]), fit_request.treatment, fit_request.outcome)
        return jsonify(run_fit(table, fit_request)), 200

    except PipelineError as e:
        logger.error(f"Fit failed in stage {e.stage}: {e}")
        body = {'error': str(e), 'stage': e.stage}
        return jsonify(body), (400 if e.is_validation else 422)
    except ValidationError as e:
        logger.error(f"Invalid fit request: {e}")
        return _error(str(e), 400)
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return _error(str(e), 422)
    except Exception as e:
        logger.error(f"Error: {traceback.format_exc()}")
        return jsonify({'error': 'Internal server error', 'details': str(e)}), 500


@app.route('/api/health', methods=['GET'])
def health():
    return jsonify({'status': 'ok', 'uploaded_files': len(uploaded_files)}), 200


if __name__ == '__main__':
    app.run(debug=True, host='0.0.0.0', port=5000)
