# Generated by Django 5.2.5 on 2026-10-12 09:14

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(max_length=32)),
                ('seed', models.BigIntegerField(default=0)),
                ('config_digest', models.CharField(max_length=64)),
                ('config', models.JSONField(default=dict)),
                ('out_dir', models.CharField(blank=True, default='', max_length=500)),
                ('status', models.CharField(choices=[('running', 'Running'), ('succeeded', 'Succeeded'), ('failed', 'Failed')], default='running', max_length=20)),
                ('started_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
                ('outputs', models.JSONField(default=list)),
                ('metrics', models.JSONField(default=dict)),
                ('error', models.TextField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-started_at'],
                'indexes': [models.Index(fields=['command', 'started_at'], name='experiments_command_idx'), models.Index(fields=['config_digest'], name='experiments_digest_idx')],
            },
        ),
    ]
